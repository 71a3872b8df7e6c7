use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, Rng};

/// A stochastic policy `pi(a | s)` over raw (unstandardized) vectors.
pub trait Policy: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// The action the policy recommends deterministically (its mean).
    fn mean_action(&self, state: &[f64]) -> Vec<f64>;
    fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Vec<f64>;
}

/// Outcome of one model transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub dead: bool,
}

/// Transition dynamics, true or estimated.
pub trait TransitionModel: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step>;
}

/// Initial-state distribution `rho_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialStates {
    /// Uniform over logged initial states.
    Empirical { states: Vec<Vec<f64>> },
    /// Independent Gaussian per dimension.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Fixed { state: Vec<f64> },
}

impl InitialStates {
    pub fn dim(&self) -> Option<usize> {
        match self {
            InitialStates::Empirical { states } => states.first().map(Vec::len),
            InitialStates::Gaussian { mean, .. } => Some(mean.len()),
            InitialStates::Fixed { state } => Some(state.len()),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        match self {
            InitialStates::Empirical { states } => {
                if states.is_empty() {
                    return Err(Error::InvalidInput("no initial states".into()));
                }
                Ok(states[rng.random_range(0..states.len())].clone())
            }
            InitialStates::Gaussian { mean, std } => Ok(mean
                .iter()
                .zip(std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect()),
            InitialStates::Fixed { state } => Ok(state.clone()),
        }
    }
}

/// Discount, truncation horizon, constraint thresholds and `rho_0`.
///
/// Rollouts visit steps `h = 0..=horizon`, i.e. at most `horizon + 1`
/// state-action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmdpSpec {
    pub gamma: f64,
    pub horizon: usize,
    pub cost_thresholds: Vec<f64>,
    pub ood_threshold: f64,
    pub initial_states: InitialStates,
}

impl CmdpSpec {
    pub fn validate(&self, cost_max: Option<&[f64]>) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.ood_threshold >= 0.0) {
            return Err(Error::InvalidInput("ood threshold must be nonnegative".into()));
        }
        if self.cost_thresholds.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidInput("cost thresholds must be nonnegative".into()));
        }
        if let Some(cmax) = cost_max {
            check_dim(cmax.len(), self.cost_thresholds.len())?;
        }
        Ok(())
    }

    /// `sum_{h=0}^{H} gamma^h`, the largest discounted sum of a unit signal.
    pub fn discount_mass(&self) -> f64 {
        (1.0 - self.gamma.powi(self.horizon as i32 + 1)) / (1.0 - self.gamma)
    }
}

/// States and actions visited by one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPath {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub terminal: bool,
    pub dead: bool,
}

impl RolloutPath {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Simulate one episode of at most `horizon + 1` steps. The run stops after
/// the first terminal transition; the step that caused it is kept.
pub fn rollout<P, M>(policy: &P, model: &M, spec: &CmdpSpec, seed: u64) -> Result<RolloutPath>
where
    P: Policy + ?Sized,
    M: TransitionModel + ?Sized,
{
    check_dim(model.state_dim(), policy.state_dim())?;
    check_dim(model.action_dim(), policy.action_dim())?;
    let mut init_rng = rng::rng_from(rng::derive(seed, rng::tag::INITIAL, 0));
    let mut state = spec.initial_states.sample(&mut init_rng)?;
    check_dim(model.state_dim(), state.len())?;
    let mut act_rng = rng::rng_from(rng::derive(seed, rng::tag::ROLLOUT, 0));
    let mut step_rng = rng::rng_from(rng::derive(seed, rng::tag::ROLLOUT, 1));
    let mut path = RolloutPath { states: Vec::new(), actions: Vec::new(), terminal: false, dead: false };
    for _ in 0..=spec.horizon {
        let action = policy.sample_action(&state, &mut act_rng);
        let step = model.step(&state, &action, &mut step_rng)?;
        path.states.push(std::mem::replace(&mut state, step.next_state));
        path.actions.push(action);
        if step.terminal || step.dead {
            path.terminal = true;
            path.dead = step.dead;
            break;
        }
    }
    Ok(path)
}
