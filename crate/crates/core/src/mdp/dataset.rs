use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One logged step: `(s, a, s+, r, c)` plus episode flags.
///
/// `next_state` is `None` only for the final sample of a trajectory: the
/// successor of the last logged step is never observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Option<Vec<f64>>,
    pub reward: f64,
    pub costs: Vec<f64>,
    pub terminal: bool,
    pub dead: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub samples: Vec<TransitionSample>,
    pub split: Option<Split>,
}

impl Trajectory {
    /// Build from an ordered list of `(state, action, reward, costs)` rows,
    /// linking each row's successor to the next row's state.
    pub fn from_rows(
        id: u64,
        rows: Vec<(Vec<f64>, Vec<f64>, f64, Vec<f64>)>,
        terminal: bool,
        dead: bool,
        split: Option<Split>,
    ) -> Trajectory {
        let len = rows.len();
        let next_states: Vec<Option<Vec<f64>>> = (0..len)
            .map(|t| rows.get(t + 1).map(|r| r.0.clone()))
            .collect();
        let samples = rows
            .into_iter()
            .zip(next_states)
            .enumerate()
            .map(|(t, ((state, action, reward, costs), next_state))| TransitionSample {
                state,
                action,
                next_state,
                reward,
                costs,
                terminal: terminal && t + 1 == len,
                dead: dead && t + 1 == len,
            })
            .collect();
        Trajectory { id, samples, split }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_dead(&self) -> bool {
        self.samples.last().is_some_and(|s| s.dead)
    }

    fn validate(&self, n: usize, m: usize, l: usize, r_max: f64, c_max: &[f64]) -> Result<()> {
        let err = |t: usize, msg: &str| Error::Data(format!("trajectory {} step {t}: {msg}", self.id));
        if self.samples.is_empty() {
            return Err(Error::Data(format!("trajectory {} is empty", self.id)));
        }
        let last = self.samples.len() - 1;
        for (t, s) in self.samples.iter().enumerate() {
            if s.state.len() != n || s.action.len() != m || s.costs.len() != l {
                return Err(err(t, "dimension mismatch"));
            }
            let finite = s.state.iter().chain(&s.action).chain(&s.costs).all(|v| v.is_finite())
                && s.reward.is_finite();
            if !finite {
                return Err(err(t, "non-finite value"));
            }
            if !(0.0..=r_max).contains(&s.reward) {
                return Err(err(t, "reward outside [0, r_max]"));
            }
            if s.costs.iter().zip(c_max).any(|(c, hi)| !(0.0..=*hi).contains(c)) {
                return Err(err(t, "cost outside [0, c_max]"));
            }
            if s.dead && !s.terminal {
                return Err(err(t, "dead sample must be terminal"));
            }
            if s.terminal && t != last {
                return Err(err(t, "terminal sample before the end of the trajectory"));
            }
            match (&s.next_state, self.samples.get(t + 1)) {
                (Some(next), Some(following)) if *next == following.state => {}
                (None, None) => {}
                _ => return Err(err(t, "next_state does not chain to the following state")),
            }
        }
        Ok(())
    }
}

/// Per-dimension affine z-score map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Fit mean and population standard deviation; constant columns get scale 1.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            check_dim(dim, row.len())?;
            count += 1;
            for j in 0..dim {
                let delta = row[j] - mean[j];
                mean[j] += delta / count as f64;
                m2[j] += delta * (row[j] - mean[j]);
            }
        }
        if count == 0 {
            return Err(Error::Data("cannot standardize an empty set".into()));
        }
        let scale = m2
            .iter()
            .map(|v| {
                let sd = (v / count as f64).sqrt();
                if sd > 1e-12 && sd.is_finite() { sd } else { 1.0 }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| v * s + m).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.mean.len() != self.scale.len() {
            return Err(Error::Data("standardization mean/scale length mismatch".into()));
        }
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Data("standardization scale must be positive".into()));
        }
        Ok(())
    }
}

/// State and action standardization of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub state: Standardizer,
    pub action: Standardizer,
}

impl Standardization {
    pub fn identity(n: usize, m: usize) -> Self {
        Standardization { state: Standardizer::identity(n), action: Standardizer::identity(m) }
    }

    pub fn state_dim(&self) -> usize {
        self.state.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action.dim()
    }

    /// Standardized concatenation `(z(s), z(a))`.
    pub fn joint(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = self.state.apply(state);
        x.extend(self.action.apply(action));
        x
    }

    /// Inverse of [`Standardization::joint`], split back into `(s, a)`.
    pub fn split_joint(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.state_dim();
        (self.state.invert(&x[..n]), self.action.invert(&x[n..]))
    }

    pub fn validate(&self) -> Result<()> {
        self.state.validate()?;
        self.action.validate()
    }
}

/// Logged trajectories with dimensions, declared bounds and the
/// standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub cost_dim: usize,
    pub reward_max: f64,
    pub cost_max: Vec<f64>,
    pub standardization: Standardization,
    pub trajectories: Vec<Trajectory>,
}

impl OfflineDataset {
    /// Validate the trajectories and fit standardization on the training
    /// split (or on everything when no split labels are present).
    pub fn new(
        trajectories: Vec<Trajectory>,
        state_dim: usize,
        action_dim: usize,
        reward_max: f64,
        cost_max: Vec<f64>,
    ) -> Result<Self> {
        let cost_dim = cost_max.len();
        for t in &trajectories {
            t.validate(state_dim, action_dim, cost_dim, reward_max, &cost_max)?;
        }
        let has_train = trajectories.iter().any(|t| t.split == Some(Split::Train));
        let fit_on = |t: &&Trajectory| !has_train || t.split == Some(Split::Train);
        let state = Standardizer::fit(
            state_dim,
            trajectories.iter().filter(fit_on).flat_map(|t| t.samples.iter().map(|s| s.state.as_slice())),
        )?;
        let action = Standardizer::fit(
            action_dim,
            trajectories.iter().filter(fit_on).flat_map(|t| t.samples.iter().map(|s| s.action.as_slice())),
        )?;
        Ok(OfflineDataset {
            state_dim,
            action_dim,
            cost_dim,
            reward_max,
            cost_max,
            standardization: Standardization { state, action },
            trajectories,
        })
    }

    /// Rebuild with a given standardization instead of refitting it.
    pub fn with_standardization(mut self, standardization: Standardization) -> Result<Self> {
        standardization.validate()?;
        check_dim(self.state_dim, standardization.state_dim())?;
        check_dim(self.action_dim, standardization.action_dim())?;
        self.standardization = standardization;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.standardization.validate()?;
        for t in &self.trajectories {
            t.validate(self.state_dim, self.action_dim, self.cost_dim, self.reward_max, &self.cost_max)?;
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &TransitionSample> {
        self.trajectories.iter().flat_map(|t| t.samples.iter())
    }

    /// Trajectories of one split; unlabeled datasets return everything.
    pub fn split(&self, split: Split) -> OfflineDataset {
        let labeled = self.trajectories.iter().any(|t| t.split.is_some());
        let trajectories = self
            .trajectories
            .iter()
            .filter(|t| !labeled || t.split == Some(split))
            .cloned()
            .collect();
        OfflineDataset { trajectories, ..self.without_trajectories() }
    }

    fn without_trajectories(&self) -> OfflineDataset {
        OfflineDataset {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            cost_dim: self.cost_dim,
            reward_max: self.reward_max,
            cost_max: self.cost_max.clone(),
            standardization: self.standardization.clone(),
            trajectories: Vec::new(),
        }
    }

    /// Standardized `(s, a)` points in dataset order.
    pub fn standardized_points(&self) -> Vec<Vec<f64>> {
        self.samples().map(|s| self.standardization.joint(&s.state, &s.action)).collect()
    }

    pub fn initial_states(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().filter_map(|t| t.samples.first().map(|s| s.state.clone())).collect()
    }

    /// Keep the first `n` trajectories.
    pub fn truncated(&self, n: usize) -> OfflineDataset {
        OfflineDataset {
            trajectories: self.trajectories.iter().take(n).cloned().collect(),
            ..self.without_trajectories()
        }
    }
}
