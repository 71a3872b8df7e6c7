use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::env::{BehaviorPolicy, SupportOracle, SyntheticClinicalCmdp, ACTION_DIM, STATE_DIM};
use crate::error::{check_dim, Error, Result};
use crate::mdp::{mc_value, CmdpSpec, McEstimate, OfflineDataset, Policy, Split, TransitionModel, Trajectory};
use crate::models::{evaluate_costs, evaluate_reward};
use crate::rng::{self, tag};

/// Behavior steps simulated to freeze the support ellipsoid.
const SUPPORT_STEPS: usize = 100_000;
/// Gaussian mass inside three standard deviations, used as the ellipsoid's
/// chi-square coverage level.
const SUPPORT_LEVEL: f64 = 0.9973;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_trajectories: usize,
    /// Trajectories have at most `horizon + 1` steps.
    pub horizon: usize,
    pub seed: u64,
    pub sigma_env: f64,
    pub sigma_b: f64,
    /// Train, validation and test fractions.
    pub split_fractions: [f64; 3],
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_trajectories: 1000,
            horizon: 20,
            seed: 0,
            sigma_env: 0.05,
            sigma_b: 0.1,
            split_fractions: [0.6, 0.2, 0.2],
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.split_fractions;
        if f.iter().any(|x| !(*x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be nonnegative and sum to 1, got {f:?}")));
        }
        if !(self.sigma_env >= 0.0 && self.sigma_b >= 0.0) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        Ok(())
    }

    /// Trajectory counts per split; test takes the rounding remainder.
    pub fn split_counts(&self) -> [usize; 3] {
        let n = self.n_trajectories;
        let train = ((n as f64) * self.split_fractions[0]).round() as usize;
        let val = (((n as f64) * self.split_fractions[1]).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        [train, val, n - train - val]
    }
}

type Row = (Vec<f64>, Vec<f64>, f64, Vec<f64>);

fn simulate<P: Policy + ?Sized>(
    env: &SyntheticClinicalCmdp,
    behavior: &P,
    horizon: usize,
    seed: u64,
) -> Result<(Vec<Row>, bool)> {
    let mut rng = rng::rng_from(seed);
    let mut state = env.pre_admission_states().sample(&mut rng)?;
    for _ in 0..env.burn_in {
        let action = behavior.sample_action(&state, &mut rng);
        let step = env.step(&state, &action, &mut rng)?;
        if step.dead {
            // Patients who die before admission are never logged; redraw.
            state = env.pre_admission_states().sample(&mut rng)?;
        } else {
            state = step.next_state;
        }
    }
    let mut rows = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        let action = behavior.sample_action(&state, &mut rng);
        let reward = evaluate_reward(&state, &action, &env.reward);
        let costs = evaluate_costs(&state, &action, &env.costs);
        let step = env.step(&state, &action, &mut rng)?;
        rows.push((state, action, reward, costs));
        if step.dead {
            return Ok((rows, true));
        }
        state = step.next_state;
    }
    Ok((rows, false))
}

/// Simulate `n_trajectories` behavior episodes on the true dynamics.
///
/// Trajectory `i` draws everything from `derive(seed, GENERATE, i)`; split
/// labels come from a shuffle seeded by `derive(seed, SPLIT, 0)`.
pub fn generate_dataset(
    env: &SyntheticClinicalCmdp,
    behavior: &BehaviorPolicy,
    config: &GenerationConfig,
) -> Result<OfflineDataset> {
    config.validate()?;
    env.validate()?;
    let env = SyntheticClinicalCmdp { sigma_env: config.sigma_env, ..env.clone() };
    let behavior = BehaviorPolicy { sigma: config.sigma_b, ..behavior.clone() };
    let mut order: Vec<usize> = (0..config.n_trajectories).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::rng_from(rng::derive(config.seed, tag::SPLIT, 0)));
    }
    let [train, val, _] = config.split_counts();
    let mut labels = vec![Split::Test; config.n_trajectories];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let trajectories = (0..config.n_trajectories)
        .into_par_iter()
        .map(|i| {
            let seed = rng::derive(config.seed, tag::GENERATE, i as u64);
            let (rows, dead) = simulate(&env, &behavior, config.horizon, seed)?;
            Ok(Trajectory::from_rows(i as u64, rows, dead, dead, Some(labels[i])))
        })
        .collect::<Result<Vec<_>>>()?;
    OfflineDataset::new(trajectories, STATE_DIM, ACTION_DIM, env.reward.max(), env.costs.max())
}

impl SyntheticClinicalCmdp {
    /// Freeze the support ellipsoid from `SUPPORT_STEPS` behavior `(s, a)`
    /// pairs, with the chi-square radius at the three-sigma coverage level.
    pub fn with_support_oracle(mut self, behavior: &BehaviorPolicy, horizon: usize, seed: u64) -> Result<Self> {
        self.validate()?;
        let mut points = Vec::with_capacity(SUPPORT_STEPS + horizon + 1);
        let mut i = 0u64;
        while points.len() < SUPPORT_STEPS {
            let (rows, _) = simulate(&self, behavior, horizon, rng::derive(seed, tag::SUPPORT, i))?;
            points.extend(rows.into_iter().map(|(s, a, _, _)| s.into_iter().chain(a).collect::<Vec<f64>>()));
            i += 1;
        }
        points.truncate(SUPPORT_STEPS);
        let chi2 = ChiSquared::new((STATE_DIM + ACTION_DIM) as f64).map_err(|e| Error::Invariant(e.to_string()))?;
        self.support = Some(SupportOracle::fit(&points, chi2.inverse_cdf(SUPPORT_LEVEL))?);
        Ok(self)
    }
}

/// Membership of a raw `(s, a)` point in the analytic support: alive state,
/// action in the closed box, and inside the frozen ellipsoid.
pub fn true_support_contains(env: &SyntheticClinicalCmdp, x: &[f64]) -> Result<bool> {
    check_dim(STATE_DIM + ACTION_DIM, x.len())?;
    let oracle = env
        .support
        .as_ref()
        .ok_or_else(|| Error::Config("environment has no support oracle; call with_support_oracle".into()))?;
    let (s, a) = x.split_at(STATE_DIM);
    Ok(env.in_box(s, a) && oracle.mahalanobis_sq(x) <= oracle.radius_sq)
}

/// Monte-Carlo value of `f` under the true dynamics.
pub fn true_value<P, F>(
    env: &SyntheticClinicalCmdp,
    policy: &P,
    f: F,
    spec: &CmdpSpec,
    n_rollouts: usize,
    seed: u64,
) -> Result<McEstimate>
where
    P: Policy + ?Sized,
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    check_dim(env.state_dim(), policy.state_dim())?;
    mc_value(policy, env, f, spec, n_rollouts, seed)
}
