//! Treatment-style evaluation metrics and report assembly.
//!
//! MCR (concordance with logged actions), AIR (intensification when a vital
//! is below its floor), ME (simulated mortality) and ACP (mean action
//! change), plus the OOD visitation rate of simulated rollouts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guardian::OodGuardian;
use crate::mdp::{rollout, CmdpSpec, OfflineDataset, Policy, TransitionModel};
use crate::policy::{guarded_rollouts, GuardedEcmdp};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalThreshold {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// MCR match radius; `None` uses [`default_concordance_epsilon`].
    #[serde(default)]
    pub concordance_epsilon: Option<f64>,
    #[serde(default)]
    pub intensification_margin: f64,
    pub vitals: Vec<VitalThreshold>,
    pub n_me_rollouts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl EvalConfig {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.vitals.is_empty() {
            return Err(Error::Config("no vital features configured".into()));
        }
        if let Some(v) = self.vitals.iter().find(|v| v.feature >= state_dim || !v.threshold.is_finite()) {
            return Err(Error::Config(format!("vital feature {} invalid for state dim {state_dim}", v.feature)));
        }
        if let Some(e) = self.concordance_epsilon {
            if !(e > 0.0) {
                return Err(Error::Config("concordance epsilon must be positive".into()));
            }
        }
        if !(self.intensification_margin >= 0.0) {
            return Err(Error::Config("intensification margin must be nonnegative".into()));
        }
        if self.n_me_rollouts == 0 {
            return Err(Error::Config("n_me_rollouts must be positive".into()));
        }
        Ok(())
    }
}

/// `0.1 * sqrt(sum_j sd_j^2)` over logged actions (population sd).
pub fn default_concordance_epsilon(ds: &OfflineDataset) -> Result<f64> {
    let actions: Vec<&Vec<f64>> = ds.samples().map(|s| &s.action).collect();
    if actions.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let n = actions.len() as f64;
    let var: f64 = (0..ds.action_dim)
        .map(|j| {
            let mean = actions.iter().map(|a| a[j]).sum::<f64>() / n;
            actions.iter().map(|a| (a[j] - mean).powi(2)).sum::<f64>() / n
        })
        .sum();
    Ok(0.1 * var.sqrt())
}

/// Fraction of logged steps where the policy's mean action lies strictly
/// within `epsilon` of the logged action.
pub fn mcr<P: Policy + ?Sized>(policy: &P, ds: &OfflineDataset, epsilon: f64) -> Result<f64> {
    let n = ds.num_samples();
    if n == 0 {
        return Err(Error::Data("MCR needs a nonempty dataset".into()));
    }
    let hits = ds
        .samples()
        .filter(|s| {
            let rec = policy.mean_action(&s.state);
            rec.iter().zip(&s.action).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() < epsilon
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// Among steps with any vital strictly below its floor, the fraction where
/// the policy's mean action exceeds the logged action by more than `margin`
/// in at least one component. `None` when no step is deteriorated.
pub fn air<P: Policy + ?Sized>(policy: &P, ds: &OfflineDataset, config: &EvalConfig) -> Result<Option<f64>> {
    config.validate(ds.state_dim)?;
    let mut deteriorated = 0usize;
    let mut intensified = 0usize;
    for s in ds.samples() {
        if !config.vitals.iter().any(|v| s.state[v.feature] < v.threshold) {
            continue;
        }
        deteriorated += 1;
        let rec = policy.mean_action(&s.state);
        if rec.iter().zip(&s.action).any(|(r, a)| *r > a + config.intensification_margin) {
            intensified += 1;
        }
    }
    Ok((deteriorated > 0).then(|| intensified as f64 / deteriorated as f64))
}

/// Fraction of `n_rollouts` simulated episodes that reach a dead state.
/// Rollout `i` uses `derive(seed, ROLLOUT, i)`.
pub fn mortality_estimate<P, M>(policy: &P, model: &M, spec: &CmdpSpec, n_rollouts: usize, seed: u64) -> Result<f64>
where
    P: Policy + ?Sized,
    M: TransitionModel + ?Sized,
{
    if n_rollouts == 0 {
        return Err(Error::InvalidInput("n_rollouts must be >= 1".into()));
    }
    let dead = (0..n_rollouts)
        .into_par_iter()
        .map(|i| rollout(policy, model, spec, rng::derive(seed, tag::ROLLOUT, i as u64)).map(|p| p.dead as usize))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(dead as f64 / n_rollouts as f64)
}

/// Mean consecutive action change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acp {
    /// `sum ||a_{t+1} - a_t||_2 / sum (T_i - 1)`.
    pub scalar: f64,
    /// Per-dimension mean `|a_{t+1,j} - a_{t,j}|`.
    pub per_dim: Vec<f64>,
}

/// `None` when no sequence has two or more actions.
pub fn acp(sequences: &[Vec<Vec<f64>>]) -> Option<Acp> {
    let dim = sequences.iter().flat_map(|s| s.first()).map(Vec::len).next()?;
    let mut pairs = 0usize;
    let mut total = 0.0;
    let mut per_dim = vec![0.0; dim];
    for seq in sequences {
        for w in seq.windows(2) {
            pairs += 1;
            let mut sq = 0.0;
            for j in 0..dim {
                let d = w[1][j] - w[0][j];
                sq += d * d;
                per_dim[j] += d.abs();
            }
            total += sq.sqrt();
        }
    }
    if pairs == 0 {
        return None;
    }
    Some(Acp { scalar: total / pairs as f64, per_dim: per_dim.into_iter().map(|v| v / pairs as f64).collect() })
}

/// Fraction of all simulated `(s_h, a_h)` visits the guardian flags.
pub fn ood_visit_rate<M, G, P>(policy: &P, ecmdp: &GuardedEcmdp<M, G>, n_rollouts: usize, seed: u64) -> Result<f64>
where
    M: TransitionModel,
    G: OodGuardian,
    P: Policy + ?Sized,
{
    if n_rollouts == 0 {
        return Err(Error::InvalidInput("n_rollouts must be >= 1".into()));
    }
    let trajs = guarded_rollouts(ecmdp, policy, n_rollouts, seed)?;
    let visits: usize = trajs.iter().map(|t| t.len()).sum();
    let flagged: usize = trajs.iter().map(|t| t.ood.iter().filter(|&&f| f).count()).sum();
    Ok(if visits == 0 { 0.0 } else { flagged as f64 / visits as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSummary {
    pub mean: f64,
    pub std: f64,
    /// 5th, 25th, 50th, 75th and 95th percentiles.
    pub quantiles: [f64; 5],
}

impl RewardSummary {
    /// Summary of per-episode cumulative rewards; quantiles use linear
    /// interpolation between order statistics.
    pub fn from_returns(returns: &[f64]) -> Result<Self> {
        if returns.is_empty() || returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput("reward summary needs finite returns".into()));
        }
        let (mean, std) = mean_sd(returns);
        let mut sorted = returns.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        Ok(RewardSummary { mean, std, quantiles: [q(0.05), q(0.25), q(0.5), q(0.75), q(0.95)] })
    }
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Metric values of one evaluated policy, one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub mcr: f64,
    pub air: Option<f64>,
    pub me: f64,
    pub acp: Option<Acp>,
    pub ood_visit_rate: f64,
    /// Per-episode cumulative rewards from the evaluation rollouts.
    pub cumulative_rewards: Vec<f64>,
}

/// Field order follows the MCR, AIR, ME, ACP table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mcr: f64,
    pub air: Option<f64>,
    pub me: f64,
    pub acp: Option<Vec<f64>>,
    pub acp_scalar: Option<f64>,
    pub ood_visit_rate: f64,
    pub mcr_epsilon: f64,
    pub reward_summary: RewardSummary,
    pub per_seed: Vec<SeedRow>,
    pub config: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub mcr: f64,
    pub air: Option<f64>,
    pub me: f64,
    pub acp_scalar: Option<f64>,
    pub ood_visit_rate: f64,
    pub mean_reward: f64,
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Invariant(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// Assemble a report from per-seed metric outputs; headline values are
/// means over seeds (AIR over seeds where it is defined).
pub fn build_report(seeds: &[SeedMetrics], mcr_epsilon: f64, config: &EvalConfig) -> Result<MetricsReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("report needs at least one seed".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for s in seeds {
        check_rate("MCR", s.mcr)?;
        check_rate("ME", s.me)?;
        check_rate("OOD visit rate", s.ood_visit_rate)?;
        if let Some(a) = s.air {
            check_rate("AIR", a)?;
        }
        if let Some(a) = &s.acp {
            if a.scalar < 0.0 || a.per_dim.iter().any(|v| *v < 0.0) || !a.scalar.is_finite() {
                return Err(Error::Invariant("ACP must be nonnegative".into()));
            }
        }
        per_seed.push(SeedRow {
            seed: s.seed,
            mcr: s.mcr,
            air: s.air,
            me: s.me,
            acp_scalar: s.acp.as_ref().map(|a| a.scalar),
            ood_visit_rate: s.ood_visit_rate,
            mean_reward: mean_sd(&s.cumulative_rewards).0,
        });
    }
    let mean_of = |f: &dyn Fn(&SeedMetrics) -> Option<f64>| {
        let v: Vec<f64> = seeds.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| mean_sd(&v).0)
    };
    let acps: Vec<&Acp> = seeds.iter().filter_map(|s| s.acp.as_ref()).collect();
    let acp = (!acps.is_empty()).then(|| {
        let m = acps[0].per_dim.len();
        (0..m).map(|j| acps.iter().map(|a| a.per_dim[j]).sum::<f64>() / acps.len() as f64).collect()
    });
    let all_rewards: Vec<f64> = seeds.iter().flat_map(|s| s.cumulative_rewards.iter().copied()).collect();
    Ok(MetricsReport {
        mcr: mean_of(&|s| Some(s.mcr)).unwrap_or(0.0),
        air: mean_of(&|s| s.air),
        me: mean_of(&|s| Some(s.me)).unwrap_or(0.0),
        acp,
        acp_scalar: mean_of(&|s| s.acp.as_ref().map(|a| a.scalar)),
        ood_visit_rate: mean_of(&|s| Some(s.ood_visit_rate)).unwrap_or(0.0),
        mcr_epsilon,
        reward_summary: RewardSummary::from_returns(&all_rewards)?,
        per_seed,
        config: config.clone(),
    })
}

/// Mean and sample SD of one metric across reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

/// Table over reports in the column order MCR, AIR, ME, ACP, OOD, reward.
pub fn aggregate_reports(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    type Getter = fn(&MetricsReport) -> Option<f64>;
    let columns: [(&str, Getter); 6] = [
        ("MCR", |r| Some(r.mcr)),
        ("AIR", |r| r.air),
        ("ME", |r| Some(r.me)),
        ("ACP", |r| r.acp_scalar),
        ("OOD", |r| Some(r.ood_visit_rate)),
        ("reward", |r| Some(r.reward_summary.mean)),
    ];
    columns
        .iter()
        .map(|(name, get)| {
            let v: Vec<f64> = reports.iter().filter_map(get).collect();
            let (mean, sd) = if v.is_empty() { (None, None) } else {
                let (m, s) = mean_sd(&v);
                (Some(m), Some(s))
            };
            AggregateRow { metric: name.to_string(), mean, sd, n: v.len() }
        })
        .collect()
}
