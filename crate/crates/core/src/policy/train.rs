use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ecmdp::{guarded_rollouts, ConstraintEstimates, GuardedEcmdp, GuardedTrajectory};
use super::gaussian::GaussianPolicy;
use crate::error::{Error, Result};
use crate::guardian::OodGuardian;
use crate::mdp::TransitionModel;
use crate::rng::{self, tag};

/// Weight of the previous value in the running per-step baseline.
const BASELINE_DECAY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    /// Primal-dual updates on the Lagrangian of every constraint.
    HardConstraint,
    /// Plain policy gradient on `r - penalty * ood`.
    RewardPenalty { penalty: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rollouts_per_iteration: usize,
    /// Parameter-space length of each normalized gradient step.
    pub step_size: f64,
    pub max_halvings: u32,
    /// Common-random-number rollouts per line-search comparison; 0 takes
    /// every step unchecked.
    pub line_search_rollouts: usize,
    pub dual_step_size: f64,
    /// Subtracted from every cost threshold during training.
    pub tightening: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100,
            rollouts_per_iteration: 100,
            step_size: 0.01,
            max_halvings: 8,
            line_search_rollouts: 100,
            dual_step_size: 0.05,
            tightening: 0.0,
            mode: TrainMode::HardConstraint,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, cost_thresholds: &[f64]) -> Result<()> {
        if self.rollouts_per_iteration < 2 {
            return Err(Error::Config("need at least two rollouts per iteration".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) || !(self.dual_step_size >= 0.0) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        if !(self.tightening >= 0.0) {
            return Err(Error::Config("tightening must be nonnegative".into()));
        }
        if self.tightening > 0.0 && cost_thresholds.iter().any(|c| self.tightening >= *c) {
            return Err(Error::Config(format!(
                "tightening {} must be below every cost threshold {cost_thresholds:?}",
                self.tightening
            )));
        }
        if let TrainMode::RewardPenalty { penalty } = self.mode {
            if !(penalty >= 0.0 && penalty.is_finite()) {
                return Err(Error::Config("penalty must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Lagrange multipliers, kept nonnegative by projection after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda_ood: f64,
    pub lambda_costs: Vec<f64>,
    pub step_size: f64,
}

impl DualState {
    pub fn new(cost_dim: usize, step_size: f64) -> Self {
        DualState { lambda_ood: 0.0, lambda_costs: vec![0.0; cost_dim], step_size }
    }

    /// Projected ascent `lambda <- max(0, lambda + step * (V - threshold))`.
    pub fn update(&mut self, estimates: &ConstraintEstimates, ood_threshold: f64, cost_thresholds: &[f64]) {
        let step = |l: f64, v: f64, c: f64| if c.is_finite() { (l + self.step_size * (v - c)).max(0.0) } else { 0.0 };
        self.lambda_ood = step(self.lambda_ood, estimates.ood.estimate, ood_threshold);
        for ((l, v), c) in self.lambda_costs.iter_mut().zip(&estimates.costs).zip(cost_thresholds) {
            *l = step(*l, v.estimate, *c);
        }
    }

    /// `[lambda_ood, lambda_1, ..]`.
    pub fn as_vec(&self) -> Vec<f64> {
        std::iter::once(self.lambda_ood).chain(self.lambda_costs.iter().copied()).collect()
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    #[serde(rename = "V_r")]
    pub v_r: f64,
    #[serde(rename = "V_ood")]
    pub v_ood: f64,
    #[serde(rename = "V_c")]
    pub v_c: Vec<f64>,
    #[serde(rename = "V_r_se")]
    pub v_r_se: f64,
    #[serde(rename = "V_ood_se")]
    pub v_ood_se: f64,
    #[serde(rename = "V_c_se")]
    pub v_c_se: Vec<f64>,
    /// `[lambda_ood, lambda_1, ..]` used for this iteration's step.
    pub lambda: Vec<f64>,
    pub step_size: f64,
    pub feasible: bool,
}

pub fn write_training_log<W: Write>(records: &[TrainRecord], mut writer: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub policy: GaussianPolicy,
    pub log: Vec<TrainRecord>,
    /// False when no iterate met the constraints; `policy` is then the
    /// minimum-violation iterate.
    pub feasible: bool,
    pub best_iteration: usize,
    /// Batch estimates of the returned iterate.
    pub estimates: ConstraintEstimates,
    pub dual: Option<DualState>,
}

struct Thresholds {
    ood: f64,
    costs: Vec<f64>,
}

impl Thresholds {
    fn feasible(&self, e: &ConstraintEstimates) -> bool {
        e.ood.estimate <= self.ood + 2.0 * e.ood.std_error
            && e.costs.iter().zip(&self.costs).all(|(v, c)| v.estimate <= c + 2.0 * v.std_error)
    }

    fn violation(&self, e: &ConstraintEstimates) -> f64 {
        let over = |v: f64, c: f64| if c.is_finite() { (v - c).max(0.0) } else { 0.0 };
        over(e.ood.estimate, self.ood) + e.costs.iter().zip(&self.costs).map(|(v, c)| over(v.estimate, *c)).sum::<f64>()
    }
}

struct Candidate {
    params: Vec<f64>,
    feasible: bool,
    objective: f64,
    violation: f64,
    estimates: ConstraintEstimates,
}

/// Per-step Lagrangian signal `l_h` of one trajectory.
fn signal(t: &GuardedTrajectory, lambda_ood: f64, lambda_costs: &[f64]) -> Vec<f64> {
    (0..t.len())
        .map(|h| {
            let ood = if t.ood[h] { 1.0 } else { 0.0 };
            let cost: f64 = lambda_costs.iter().zip(&t.costs[h]).map(|(l, c)| l * c).sum();
            t.rewards[h] - lambda_ood * ood - cost
        })
        .collect()
}

fn discounted_mean<M, G>(
    ecmdp: &GuardedEcmdp<M, G>,
    policy: &GaussianPolicy,
    n: usize,
    seed: u64,
    lambda: (f64, &[f64]),
) -> Result<f64>
where
    M: TransitionModel,
    G: OodGuardian,
{
    let trajs = guarded_rollouts(ecmdp, policy, n, seed)?;
    let gamma = ecmdp.spec.gamma;
    let total: f64 = trajs
        .iter()
        .map(|t| signal(t, lambda.0, lambda.1).iter().enumerate().map(|(h, l)| gamma.powi(h as i32) * l).sum::<f64>())
        .sum();
    Ok(total / n as f64)
}

fn train_impl<M, G>(
    ecmdp: &GuardedEcmdp<M, G>,
    init: &GaussianPolicy,
    config: &TrainConfig,
    thresholds: Thresholds,
) -> Result<TrainResult>
where
    M: TransitionModel,
    G: OodGuardian,
{
    config.validate(&ecmdp.spec.cost_thresholds)?;
    init.validate()?;
    let gamma = ecmdp.spec.gamma;
    let cost_dim = ecmdp.costs.len();
    let hard = matches!(config.mode, TrainMode::HardConstraint);
    let mut dual = DualState::new(cost_dim, config.dual_step_size);
    let mut policy = init.clone();
    let mut baseline: Vec<Option<f64>> = Vec::new();
    let mut candidates = Vec::with_capacity(config.iterations + 1);
    let mut log = Vec::with_capacity(config.iterations + 1);

    for it in 0..=config.iterations {
        let n = config.rollouts_per_iteration;
        let trajs = guarded_rollouts(ecmdp, &policy, n, rng::derive(config.seed, tag::GRADIENT, it as u64))?;
        let est = ConstraintEstimates::from_trajectories(&trajs, gamma, cost_dim)?;
        let feasible = thresholds.feasible(&est);
        let (lambda_ood, lambda_costs) = match config.mode {
            TrainMode::HardConstraint => (dual.lambda_ood, dual.lambda_costs.clone()),
            TrainMode::RewardPenalty { penalty } => (penalty, vec![0.0; cost_dim]),
        };
        let objective = if hard { est.reward.estimate } else { est.reward.estimate - lambda_ood * est.ood.estimate };
        candidates.push(Candidate {
            params: policy.params(),
            feasible,
            objective,
            violation: thresholds.violation(&est),
            estimates: est.clone(),
        });
        let mut record = TrainRecord {
            iter: it,
            v_r: est.reward.estimate,
            v_ood: est.ood.estimate,
            v_c: est.costs.iter().map(|c| c.estimate).collect(),
            v_r_se: est.reward.std_error,
            v_ood_se: est.ood.std_error,
            v_c_se: est.costs.iter().map(|c| c.std_error).collect(),
            lambda: std::iter::once(lambda_ood).chain(lambda_costs.iter().copied()).collect(),
            step_size: 0.0,
            feasible,
        };
        if it == config.iterations {
            log.push(record);
            break;
        }

        // REINFORCE with discounted reward-to-go and a running per-step baseline.
        let horizon = trajs.iter().map(GuardedTrajectory::len).max().unwrap_or(0);
        if baseline.len() < horizon {
            baseline.resize(horizon, None);
        }
        let mut rtg_all: Vec<Vec<f64>> = Vec::with_capacity(n);
        for t in &trajs {
            let l = signal(t, lambda_ood, &lambda_costs);
            let mut rtg = vec![0.0; l.len()];
            let mut acc = 0.0;
            for h in (0..l.len()).rev() {
                acc += gamma.powi(h as i32) * l[h];
                rtg[h] = acc;
            }
            rtg_all.push(rtg);
        }
        let mut step_means = vec![(0.0, 0usize); horizon];
        for rtg in &rtg_all {
            for (h, v) in rtg.iter().enumerate() {
                step_means[h].0 += v;
                step_means[h].1 += 1;
            }
        }
        let batch_mean: Vec<f64> = step_means.iter().map(|(s, c)| s / *c as f64).collect();
        let b: Vec<f64> = (0..horizon).map(|h| baseline[h].unwrap_or(batch_mean[h])).collect();
        let mut grad = vec![0.0; policy.num_params()];
        for (t, rtg) in trajs.iter().zip(&rtg_all) {
            for h in 0..t.len() {
                policy.accumulate_log_prob_grad(&t.states[h], &t.actions[h], (rtg[h] - b[h]) / n as f64, &mut grad);
            }
        }
        for h in 0..horizon {
            baseline[h] = Some(match baseline[h] {
                Some(old) => BASELINE_DECAY * old + (1.0 - BASELINE_DECAY) * batch_mean[h],
                None => batch_mean[h],
            });
        }

        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut step = 0.0;
        if norm > 0.0 && norm.is_finite() {
            let theta = policy.params();
            let direction: Vec<f64> = grad.iter().map(|g| g / norm).collect();
            let mut candidate = policy.clone();
            let mut eta = config.step_size;
            if config.line_search_rollouts == 0 {
                step = eta;
            } else {
                let seed = rng::derive(config.seed, tag::LINE_SEARCH, it as u64);
                let m = config.line_search_rollouts;
                let before = discounted_mean(ecmdp, &policy, m, seed, (lambda_ood, &lambda_costs))?;
                for _ in 0..=config.max_halvings {
                    let trial: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t + eta * d).collect();
                    candidate.set_params(&trial)?;
                    if discounted_mean(ecmdp, &candidate, m, seed, (lambda_ood, &lambda_costs))? > before {
                        step = eta;
                        break;
                    }
                    eta *= 0.5;
                }
            }
            if step > 0.0 {
                let next: Vec<f64> = theta.iter().zip(&direction).map(|(t, d)| t + step * d).collect();
                policy.set_params(&next)?;
            }
        }
        record.step_size = step;
        log.push(record);
        if hard {
            dual.update(&est, thresholds.ood, &thresholds.costs);
        }
    }

    // Feasible iterates by objective, else least violation; later iterates win ties.
    let any_feasible = candidates.iter().any(|c| c.feasible);
    let best = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.feasible == any_feasible)
        .max_by(|(_, a), (_, b)| {
            if any_feasible {
                a.objective.total_cmp(&b.objective)
            } else {
                b.violation.total_cmp(&a.violation)
            }
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Invariant("no training iterate recorded".into()))?;
    let chosen = &candidates[best];
    let mut out = init.clone();
    out.set_params(&chosen.params)?;
    Ok(TrainResult {
        policy: out,
        log,
        feasible: any_feasible,
        best_iteration: best,
        estimates: chosen.estimates.clone(),
        dual: hard.then_some(dual),
    })
}

/// Primal-dual training against `V_ood <= c_g` and `V_c_j <= c_j - tightening`.
pub fn train_guarded<M, G>(ecmdp: &GuardedEcmdp<M, G>, init: &GaussianPolicy, config: &TrainConfig) -> Result<TrainResult>
where
    M: TransitionModel,
    G: OodGuardian,
{
    if !matches!(config.mode, TrainMode::HardConstraint) {
        return Err(Error::Config("train_guarded needs hard-constraint mode".into()));
    }
    let thresholds = Thresholds {
        ood: ecmdp.spec.ood_threshold,
        costs: ecmdp.spec.cost_thresholds.iter().map(|c| c - config.tightening).collect(),
    };
    train_impl(ecmdp, init, config, thresholds)
}

/// Policy gradient on `r - penalty * ood`; feasibility is still judged on
/// the model's constraints.
pub fn train_penalty<M, G>(ecmdp: &GuardedEcmdp<M, G>, init: &GaussianPolicy, config: &TrainConfig) -> Result<TrainResult>
where
    M: TransitionModel,
    G: OodGuardian,
{
    if !matches!(config.mode, TrainMode::RewardPenalty { .. }) {
        return Err(Error::Config("train_penalty needs reward-penalty mode".into()));
    }
    let thresholds = Thresholds {
        ood: ecmdp.spec.ood_threshold,
        costs: ecmdp.spec.cost_thresholds.iter().map(|c| c - config.tightening).collect(),
    };
    train_impl(ecmdp, init, config, thresholds)
}

/// Policy gradient on the reward alone with every constraint dropped.
pub fn train_unconstrained<M, G>(
    ecmdp: &GuardedEcmdp<M, G>,
    init: &GaussianPolicy,
    config: &TrainConfig,
) -> Result<TrainResult>
where
    M: TransitionModel,
    G: OodGuardian,
{
    let config = TrainConfig { mode: TrainMode::RewardPenalty { penalty: 0.0 }, tightening: 0.0, ..config.clone() };
    let thresholds = Thresholds { ood: f64::INFINITY, costs: vec![f64::INFINITY; ecmdp.costs.len()] };
    train_impl(ecmdp, init, &config, thresholds)
}
