use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::guardian::{Guardian, OodGuardian};
use crate::mdp::{discounted_return, rollout, CmdpSpec, McEstimate, Policy, TransitionModel};
use crate::models::{evaluate_costs, evaluate_reward, CostRules, KnnTransitionModel, RewardRule};
use crate::rng::{self, tag};

/// Estimated dynamics, rules, guardian and thresholds: the guarded
/// estimated CMDP. `spec.ood_threshold` is the OOD cost budget.
#[derive(Debug, Clone)]
pub struct GuardedEcmdp<M = KnnTransitionModel, G = Guardian> {
    pub dynamics: M,
    pub reward: RewardRule,
    pub costs: CostRules,
    pub guardian: G,
    pub spec: CmdpSpec,
}

impl<M: TransitionModel, G: OodGuardian> GuardedEcmdp<M, G> {
    pub fn new(dynamics: M, reward: RewardRule, costs: CostRules, guardian: G, spec: CmdpSpec) -> Result<Self> {
        let e = GuardedEcmdp { dynamics, reward, costs, guardian, spec };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dynamics.state_dim();
        self.reward.validate(n)?;
        self.costs.validate(n)?;
        self.spec.validate(Some(&self.costs.max()))?;
        if let Some(d) = self.spec.initial_states.dim() {
            check_dim(n, d)?;
        }
        Ok(())
    }

    /// Same environment with a different spec (e.g. tightened thresholds).
    pub fn with_spec(&self, spec: CmdpSpec) -> Result<GuardedEcmdp<M, G>>
    where
        M: Clone,
        G: Clone,
    {
        GuardedEcmdp::new(self.dynamics.clone(), self.reward.clone(), self.costs.clone(), self.guardian.clone(), spec)
    }
}

/// One rollout with its per-step reward, cost vector and guardian flag.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardedTrajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub costs: Vec<Vec<f64>>,
    pub ood: Vec<bool>,
    pub terminal: bool,
    pub dead: bool,
}

/// Discounted sums of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedReturns {
    pub reward: f64,
    pub ood: f64,
    pub costs: Vec<f64>,
}

impl GuardedTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn ood_values(&self) -> Vec<f64> {
        self.ood.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect()
    }

    pub fn discounted(&self, gamma: f64, cost_dim: usize) -> Result<DiscountedReturns> {
        let costs = (0..cost_dim)
            .map(|j| discounted_return(&self.costs.iter().map(|c| c[j]).collect::<Vec<_>>(), gamma))
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscountedReturns {
            reward: discounted_return(&self.rewards, gamma)?,
            ood: discounted_return(&self.ood_values(), gamma)?,
            costs,
        })
    }
}

/// Roll out `policy` in the estimated model and score every visited pair.
pub fn rollout_guarded<M, G, P>(ecmdp: &GuardedEcmdp<M, G>, policy: &P, seed: u64) -> Result<GuardedTrajectory>
where
    M: TransitionModel,
    G: OodGuardian,
    P: Policy + ?Sized,
{
    let path = rollout(policy, &ecmdp.dynamics, &ecmdp.spec, seed)?;
    let mut rewards = Vec::with_capacity(path.len());
    let mut costs = Vec::with_capacity(path.len());
    let mut ood = Vec::with_capacity(path.len());
    for (s, a) in path.states.iter().zip(&path.actions) {
        rewards.push(evaluate_reward(s, a, &ecmdp.reward));
        costs.push(evaluate_costs(s, a, &ecmdp.costs));
        ood.push(ecmdp.guardian.verdict(s, a)?.ood);
    }
    Ok(GuardedTrajectory {
        states: path.states,
        actions: path.actions,
        rewards,
        costs,
        ood,
        terminal: path.terminal,
        dead: path.dead,
    })
}

/// `n` rollouts; rollout `i` uses `derive(seed, ROLLOUT, i)`. Output is in index order.
pub fn guarded_rollouts<M, G, P>(ecmdp: &GuardedEcmdp<M, G>, policy: &P, n: usize, seed: u64) -> Result<Vec<GuardedTrajectory>>
where
    M: TransitionModel,
    G: OodGuardian,
    P: Policy + ?Sized,
{
    (0..n)
        .into_par_iter()
        .map(|i| rollout_guarded(ecmdp, policy, rng::derive(seed, tag::ROLLOUT, i as u64)))
        .collect()
}

/// Monte-Carlo estimates of `V_r`, `V_ood` and each `V_c_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEstimates {
    pub reward: McEstimate,
    pub ood: McEstimate,
    pub costs: Vec<McEstimate>,
}

impl ConstraintEstimates {
    pub fn from_trajectories(trajs: &[GuardedTrajectory], gamma: f64, cost_dim: usize) -> Result<Self> {
        let returns = trajs.iter().map(|t| t.discounted(gamma, cost_dim)).collect::<Result<Vec<_>>>()?;
        let column = |f: &dyn Fn(&DiscountedReturns) -> f64| McEstimate::from_samples(&returns.iter().map(f).collect::<Vec<_>>());
        Ok(ConstraintEstimates {
            reward: column(&|r| r.reward),
            ood: column(&|r| r.ood),
            costs: (0..cost_dim).map(|j| column(&|r| r.costs[j])).collect(),
        })
    }
}

pub fn estimate_constraint_values<M, G, P>(
    ecmdp: &GuardedEcmdp<M, G>,
    policy: &P,
    n_rollouts: usize,
    seed: u64,
) -> Result<ConstraintEstimates>
where
    M: TransitionModel,
    G: OodGuardian,
    P: Policy + ?Sized,
{
    if n_rollouts == 0 {
        return Err(Error::InvalidInput("n_rollouts must be >= 1".into()));
    }
    let trajs = guarded_rollouts(ecmdp, policy, n_rollouts, seed)?;
    ConstraintEstimates::from_trajectories(&trajs, ecmdp.spec.gamma, ecmdp.costs.len())
}

/// Joint chance of ever leaving the support within the horizon, its union
/// bound, and the discounted OOD cost, each with a standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceProxy {
    pub joint_violation_prob: f64,
    pub boole_sum: f64,
    pub discounted_ood_cost: f64,
    pub joint_std_error: f64,
    pub boole_std_error: f64,
    pub discounted_std_error: f64,
}

impl ChanceProxy {
    /// Combined Monte-Carlo error of the joint and union estimates.
    pub fn mc_error(&self) -> f64 {
        self.joint_std_error.hypot(self.boole_std_error)
    }
}

pub fn verify_chance_proxy<M, G, P>(ecmdp: &GuardedEcmdp<M, G>, policy: &P, n_mc: usize, seed: u64) -> Result<ChanceProxy>
where
    M: TransitionModel,
    G: OodGuardian,
    P: Policy + ?Sized,
{
    if n_mc < 100 {
        return Err(Error::InvalidInput(format!("n_mc must be at least 100, got {n_mc}")));
    }
    let trajs = guarded_rollouts(ecmdp, policy, n_mc, seed)?;
    let joint: Vec<f64> = trajs.iter().map(|t| if t.ood.iter().any(|&f| f) { 1.0 } else { 0.0 }).collect();
    // Per-rollout flag counts average to sum_h Pr{flag at h}.
    let counts: Vec<f64> = trajs.iter().map(|t| t.ood.iter().filter(|&&f| f).count() as f64).collect();
    let discounted = trajs
        .iter()
        .map(|t| discounted_return(&t.ood_values(), ecmdp.spec.gamma))
        .collect::<Result<Vec<_>>>()?;
    let (j, b, d) = (McEstimate::from_samples(&joint), McEstimate::from_samples(&counts), McEstimate::from_samples(&discounted));
    Ok(ChanceProxy {
        joint_violation_prob: j.estimate,
        boole_sum: b.estimate,
        discounted_ood_cost: d.estimate,
        joint_std_error: j.std_error,
        boole_std_error: b.std_error,
        discounted_std_error: d.std_error,
    })
}
