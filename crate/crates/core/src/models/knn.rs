use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mdp::{OfflineDataset, Standardization, Step, TransitionModel};
use crate::neighbors::KdTree;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    InverseDistance,
}

/// Serializable hyperparameters; the index itself is rebuilt from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    #[serde(default)]
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq)]
struct Record {
    /// `None` for a terminal step whose successor was never logged.
    successor: Option<Vec<f64>>,
    terminal: bool,
    dead: bool,
}

/// Nonparametric dynamics: a query `(s, a)` is answered by one of the `k`
/// nearest logged keys, whose observed successor and flags are returned.
#[derive(Debug, Clone)]
pub struct KnnTransitionModel {
    pub config: KnnConfig,
    pub standardization: Standardization,
    tree: KdTree,
    records: Vec<Record>,
}

impl KnnTransitionModel {
    /// Index every sample with a logged successor or a terminal flag. The
    /// final row of a trajectory truncated by the horizon has neither and is
    /// skipped.
    pub fn fit(ds: &OfflineDataset, config: KnnConfig) -> Result<Self> {
        if config.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        let st = ds.standardization.clone();
        let mut keys = Vec::new();
        let mut records = Vec::new();
        for t in ds.samples() {
            if t.next_state.is_none() && !t.terminal {
                continue;
            }
            keys.push(st.joint(&t.state, &t.action));
            records.push(Record { successor: t.next_state.clone(), terminal: t.terminal, dead: t.dead });
        }
        if records.is_empty() {
            return Err(Error::Model("kNN index is empty".into()));
        }
        let tree = KdTree::new(ds.state_dim + ds.action_dim, &keys);
        Ok(KnnTransitionModel { config, standardization: st, tree, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_dead_records(&self) -> bool {
        self.records.iter().any(|r| r.dead)
    }

    fn choose(&self, neighbors: &[(usize, f64)], rng: &mut Rng) -> usize {
        match self.config.weighting {
            Weighting::Uniform => neighbors[rng.random_range(0..neighbors.len())].0,
            Weighting::InverseDistance => {
                // Exact key matches take all the mass.
                let exact: Vec<usize> = neighbors.iter().filter(|(_, d)| *d == 0.0).map(|(i, _)| *i).collect();
                if !exact.is_empty() {
                    return exact[rng.random_range(0..exact.len())];
                }
                let weights: Vec<f64> = neighbors.iter().map(|(_, d)| 1.0 / d).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for ((i, _), w) in neighbors.iter().zip(&weights) {
                    if u < *w {
                        return *i;
                    }
                    u -= w;
                }
                neighbors[neighbors.len() - 1].0
            }
        }
    }

    /// One successor draw with a stream seeded from `seed`.
    pub fn knn_next(&self, state: &[f64], action: &[f64], seed: u64) -> Result<Step> {
        self.step(state, action, &mut rng::rng_from(seed))
    }
}

impl TransitionModel for KnnTransitionModel {
    fn state_dim(&self) -> usize {
        self.standardization.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.standardization.action_dim()
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step> {
        check_dim(self.state_dim(), state.len())?;
        check_dim(self.action_dim(), action.len())?;
        if self.records.is_empty() {
            return Err(Error::Model("kNN index is empty".into()));
        }
        let key = self.standardization.joint(state, action);
        let neighbors = self.tree.nearest(&key, self.config.k);
        let record = &self.records[self.choose(&neighbors, rng)];
        Ok(Step {
            next_state: record.successor.clone().unwrap_or_else(|| state.to_vec()),
            terminal: record.terminal,
            dead: record.dead,
        })
    }
}
