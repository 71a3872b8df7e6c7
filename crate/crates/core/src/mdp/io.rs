//! Trajectory CSV and dataset metadata JSON.
//!
//! Header: `traj_id,step,s_0..s_{n-1},a_0..a_{m-1},reward,c_0..c_{l-1},terminal,dead`
//! with an optional trailing `split` column. One row per logged step; the
//! successor of a row is the state of the next row of the same trajectory.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{OfflineDataset, Split, Standardization, Trajectory};

/// Everything about a dataset that is not in the CSV rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub state_dim: usize,
    pub action_dim: usize,
    pub cost_dim: usize,
    pub reward_max: f64,
    pub cost_max: Vec<f64>,
    pub standardization: Standardization,
    pub num_trajectories: usize,
    pub num_samples: usize,
}

impl DatasetMetadata {
    pub fn of(ds: &OfflineDataset) -> Self {
        DatasetMetadata {
            state_dim: ds.state_dim,
            action_dim: ds.action_dim,
            cost_dim: ds.cost_dim,
            reward_max: ds.reward_max,
            cost_max: ds.cost_max.clone(),
            standardization: ds.standardization.clone(),
            num_trajectories: ds.trajectories.len(),
            num_samples: ds.num_samples(),
        }
    }
}

fn header(n: usize, m: usize, l: usize, with_split: bool) -> Vec<String> {
    let mut h = vec!["traj_id".to_string(), "step".to_string()];
    h.extend((0..n).map(|i| format!("s_{i}")));
    h.extend((0..m).map(|i| format!("a_{i}")));
    h.push("reward".into());
    h.extend((0..l).map(|i| format!("c_{i}")));
    h.push("terminal".into());
    h.push("dead".into());
    if with_split {
        h.push("split".into());
    }
    h
}

fn flag(b: bool) -> &'static str {
    if b { "1" } else { "0" }
}

/// Write the dataset rows. Floats use the shortest round-trip decimal form,
/// so the same dataset always produces the same bytes.
pub fn write_dataset_csv<W: Write>(ds: &OfflineDataset, writer: W) -> Result<()> {
    let with_split = ds.trajectories.iter().any(|t| t.split.is_some());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(ds.state_dim, ds.action_dim, ds.cost_dim, with_split))?;
    for t in &ds.trajectories {
        for (step, s) in t.samples.iter().enumerate() {
            let mut rec = vec![t.id.to_string(), step.to_string()];
            rec.extend(s.state.iter().map(f64::to_string));
            rec.extend(s.action.iter().map(f64::to_string));
            rec.push(s.reward.to_string());
            rec.extend(s.costs.iter().map(f64::to_string));
            rec.push(flag(s.terminal).into());
            rec.push(flag(s.dead).into());
            if with_split {
                rec.push(t.split.map_or("", Split::as_str).into());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn count_prefix(cols: &[String], prefix: &str) -> usize {
    (0..).take_while(|i| cols.iter().any(|c| *c == format!("{prefix}{i}"))).count()
}

/// Parse a dataset CSV. Dimensions come from the header; bounds and
/// standardization from `metadata` when given, otherwise the bounds are the
/// observed maxima and standardization is refitted.
pub fn read_dataset_csv<R: Read>(reader: R, metadata: Option<&DatasetMetadata>) -> Result<OfflineDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let cols: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n = count_prefix(&cols, "s_");
    let m = count_prefix(&cols, "a_");
    let l = count_prefix(&cols, "c_");
    let with_split = cols.last().is_some_and(|c| c == "split");
    if cols != header(n, m, l, with_split) {
        return Err(Error::Data(format!("unexpected CSV header: {}", cols.join(","))));
    }
    if let Some(meta) = metadata {
        if (meta.state_dim, meta.action_dim, meta.cost_dim) != (n, m, l) {
            return Err(Error::Data("CSV header disagrees with metadata dimensions".into()));
        }
    }

    struct Pending {
        id: u64,
        rows: Vec<(Vec<f64>, Vec<f64>, f64, Vec<f64>)>,
        terminal: bool,
        dead: bool,
        split: Option<Split>,
    }
    let mut trajectories = Vec::new();
    let mut current: Option<Pending> = None;
    let parse_f = |s: &str, line: u64| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::Data(format!("line {line}: bad number {s:?}")))
    };
    let parse_flag = |s: &str, line: u64| -> Result<bool> {
        match s.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Data(format!("line {line}: flag must be 0 or 1, got {other:?}"))),
        }
    };
    let finish = |p: Pending, out: &mut Vec<Trajectory>| {
        out.push(Trajectory::from_rows(p.id, p.rows, p.terminal, p.dead, p.split));
    };

    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let id: u64 = rec[0].trim().parse().map_err(|_| Error::Data(format!("line {line}: bad traj_id")))?;
        let step: usize = rec[1].trim().parse().map_err(|_| Error::Data(format!("line {line}: bad step")))?;
        let mut k = 2;
        let mut take = |count: usize| -> Result<Vec<f64>> {
            let v = (k..k + count).map(|j| parse_f(&rec[j], line)).collect();
            k += count;
            v
        };
        let state = take(n)?;
        let action = take(m)?;
        let reward = take(1)?[0];
        let costs = take(l)?;
        let terminal = parse_flag(&rec[k], line)?;
        let dead = parse_flag(&rec[k + 1], line)?;
        let split = if with_split {
            let raw = rec[k + 2].trim();
            if raw.is_empty() {
                None
            } else {
                Some(Split::parse(raw).ok_or_else(|| Error::Data(format!("line {line}: bad split {raw:?}")))?)
            }
        } else {
            None
        };

        if current.as_ref().is_some_and(|p| p.id != id) {
            finish(current.take().unwrap(), &mut trajectories);
        }
        let p = current.get_or_insert_with(|| Pending { id, rows: Vec::new(), terminal: false, dead: false, split });
        if step != p.rows.len() {
            return Err(Error::Data(format!("line {line}: trajectory {id} step {step} out of order")));
        }
        if p.terminal {
            return Err(Error::Data(format!("line {line}: trajectory {id} continues after a terminal step")));
        }
        if p.split != split {
            return Err(Error::Data(format!("line {line}: trajectory {id} changes split")));
        }
        if dead && !terminal {
            return Err(Error::Data(format!("line {line}: dead step must be terminal")));
        }
        p.rows.push((state, action, reward, costs));
        p.terminal = terminal;
        p.dead = dead;
    }
    if let Some(p) = current.take() {
        finish(p, &mut trajectories);
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(t) = trajectories.iter().find(|t| !seen.insert(t.id)) {
        return Err(Error::Data(format!("trajectory {} appears in more than one block", t.id)));
    }

    match metadata {
        Some(meta) => {
            let ds = OfflineDataset::new(trajectories, n, m, meta.reward_max, meta.cost_max.clone())?;
            ds.with_standardization(meta.standardization.clone())
        }
        None => {
            let all = trajectories.iter().flat_map(|t| &t.samples);
            let r_max = all.clone().map(|s| s.reward).fold(0.0, f64::max);
            let c_max = (0..l).map(|j| all.clone().map(|s| s.costs[j]).fold(0.0, f64::max)).collect();
            OfflineDataset::new(trajectories, n, m, r_max, c_max)
        }
    }
}
