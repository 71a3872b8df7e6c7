use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mdp::{InitialStates, Policy, Step, TransitionModel};
use crate::models::{CostRule, CostRules, RewardRule};
use crate::rng::Rng;

pub(crate) const STATE_DIM: usize = 4;
pub(crate) const ACTION_DIM: usize = 2;

/// Frozen covariance ellipsoid over behavior `(s, a)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportOracle {
    pub mean: Vec<f64>,
    /// Inverse covariance, row-major.
    pub precision: Vec<f64>,
    /// Squared Mahalanobis radius.
    pub radius_sq: f64,
}

impl SupportOracle {
    pub fn fit(points: &[Vec<f64>], radius_sq: f64) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidInput("support oracle needs at least two points".into()));
        }
        let d = points[0].len();
        let mut mean = vec![0.0; d];
        for p in points {
            check_dim(d, p.len())?;
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for p in points {
            let c = DVector::from_iterator(d, p.iter().zip(&mean).map(|(x, m)| x - m));
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
        let precision = cov
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("support covariance is singular".into()))?;
        Ok(SupportOracle { mean, precision: precision.transpose().as_slice().to_vec(), radius_sq })
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let c: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        (0..d).map(|i| c[i] * (0..d).map(|j| self.precision[i * d + j] * c[j]).sum::<f64>()).sum()
    }
}

/// `y+ = A y + B clip(a) + drift + sigma_env * eps` in normalized state
/// coordinates `y = (s - center) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticClinicalCmdp {
    pub transition: Vec<Vec<f64>>,
    pub control: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
    pub sigma_env: f64,
    pub state_center: Vec<f64>,
    pub state_scale: Vec<f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Raw `v1` below which the patient dies.
    pub dead_floor: f64,
    /// Raw-unit Gaussian draw that is then run for `burn_in` unlogged
    /// behavior steps before admission.
    pub initial_mean: Vec<f64>,
    pub initial_std: Vec<f64>,
    pub burn_in: usize,
    pub reward: RewardRule,
    pub costs: CostRules,
    #[serde(default)]
    pub support: Option<SupportOracle>,
}

impl Default for SyntheticClinicalCmdp {
    fn default() -> Self {
        let center = vec![0.946, 0.89, 0.0, 0.0];
        let scale = vec![0.02, 0.3, 1.0, 1.0];
        SyntheticClinicalCmdp {
            transition: vec![
                vec![0.5, 0.0, -0.5, 0.0],
                vec![0.0, 0.5, -0.3, -0.3],
                vec![0.0, 0.0, 0.99, 0.0],
                vec![0.0, 0.0, 0.0, 0.99],
            ],
            control: vec![vec![0.4, 0.1], vec![0.2, 0.4], vec![0.0, 0.0], vec![0.0, 0.0]],
            drift: vec![-0.65, -0.74, 0.01, 0.008],
            sigma_env: 0.05,
            action_low: vec![0.0, 0.0],
            action_high: vec![2.0, 2.0],
            // Normalized v1 = -1.8.
            dead_floor: 0.91,
            initial_mean: vec![0.926, 0.59, 1.0, 0.8],
            initial_std: vec![0.4 * scale[0], 0.4 * scale[1], 0.354, 0.354],
            burn_in: 10,
            reward: RewardRule::InverseSquaredNorm {
                center: center.clone(),
                scale: scale.iter().map(|s| 2.0 * s).collect(),
            },
            // Shortfall below each floor, in normalized units.
            costs: CostRules {
                rules: vec![
                    CostRule::BelowThreshold { feature: 0, threshold: 0.92, scale: 1.0 / scale[0], max: 1.0 },
                    CostRule::BelowThreshold { feature: 1, threshold: 0.5, scale: 1.0 / scale[1], max: 1.0 },
                ],
            },
            state_center: center,
            state_scale: scale,
            support: None,
        }
    }
}

impl SyntheticClinicalCmdp {
    pub fn validate(&self) -> Result<()> {
        let shaped = |m: &Vec<Vec<f64>>, cols: usize| m.len() == STATE_DIM && m.iter().all(|r| r.len() == cols);
        if !shaped(&self.transition, STATE_DIM) || !shaped(&self.control, ACTION_DIM) {
            return Err(Error::Config("transition must be 4x4 and control 4x2".into()));
        }
        for v in [&self.drift, &self.state_center, &self.state_scale, &self.initial_mean, &self.initial_std] {
            check_dim(STATE_DIM, v.len())?;
        }
        check_dim(ACTION_DIM, self.action_low.len())?;
        check_dim(ACTION_DIM, self.action_high.len())?;
        if self.state_scale.iter().any(|s| !(*s > 0.0)) || !(self.sigma_env >= 0.0) {
            return Err(Error::Config("scales must be positive and sigma_env nonnegative".into()));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("empty action box".into()));
        }
        if self.spectral_radius() >= 1.0 {
            return Err(Error::Config("transition matrix is not stable".into()));
        }
        self.reward.validate(STATE_DIM)?;
        self.costs.validate(STATE_DIM)
    }

    pub fn spectral_radius(&self) -> f64 {
        let a = DMatrix::from_fn(STATE_DIM, STATE_DIM, |i, j| self.transition[i][j]);
        a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        state.iter().zip(&self.state_center).zip(&self.state_scale).map(|((s, c), k)| (s - c) / k).collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.state_center).zip(&self.state_scale).map(|((y, c), k)| c + k * y).collect()
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(&self.action_low)
            .zip(&self.action_high)
            .map(|((a, l), h)| a.clamp(*l, *h))
            .collect()
    }

    pub fn is_dead(&self, state: &[f64]) -> bool {
        state[0] < self.dead_floor
    }

    /// Noise-free successor in raw units.
    pub fn mean_next(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let y = self.normalize(state);
        let a = self.clip_action(action);
        let next: Vec<f64> = (0..STATE_DIM)
            .map(|i| {
                let ay: f64 = self.transition[i].iter().zip(&y).map(|(m, v)| m * v).sum();
                let ba: f64 = self.control[i].iter().zip(&a).map(|(m, v)| m * v).sum();
                ay + ba + self.drift[i]
            })
            .collect();
        self.denormalize(&next)
    }

    /// Gaussian draw before burn-in.
    pub fn pre_admission_states(&self) -> InitialStates {
        InitialStates::Gaussian { mean: self.initial_mean.clone(), std: self.initial_std.clone() }
    }

    /// Box part of the support: the state is alive and the action lies in the closed box.
    pub fn in_box(&self, state: &[f64], action: &[f64]) -> bool {
        !self.is_dead(state)
            && action.iter().zip(&self.action_low).zip(&self.action_high).all(|((a, l), h)| *l <= *a && *a <= *h)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: SyntheticClinicalCmdp = serde_json::from_str(text)?;
        env.validate()?;
        Ok(env)
    }
}

impl TransitionModel for SyntheticClinicalCmdp {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn step(&self, state: &[f64], action: &[f64], rng: &mut Rng) -> Result<Step> {
        check_dim(STATE_DIM, state.len())?;
        check_dim(ACTION_DIM, action.len())?;
        let mean = self.mean_next(state, action);
        let next_state: Vec<f64> = mean
            .iter()
            .zip(&self.state_scale)
            .map(|(m, k)| m + k * self.sigma_env * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let dead = self.is_dead(&next_state);
        Ok(Step { next_state, terminal: dead, dead })
    }
}

/// Clinician-like feedback on the two vitals:
/// `a = clip(bias + gain * (target - y_vitals) + sigma * z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorPolicy {
    pub bias: Vec<f64>,
    pub gain: Vec<f64>,
    /// Normalized vital targets.
    pub target: Vec<f64>,
    pub sigma: f64,
    pub state_center: Vec<f64>,
    pub state_scale: Vec<f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl BehaviorPolicy {
    pub fn standard(env: &SyntheticClinicalCmdp) -> Self {
        BehaviorPolicy {
            bias: vec![1.0, 1.0],
            gain: vec![0.3, 0.3],
            target: vec![0.0, 0.0],
            sigma: 0.1,
            state_center: env.state_center.clone(),
            state_scale: env.state_scale.clone(),
            action_low: env.action_low.clone(),
            action_high: env.action_high.clone(),
        }
    }

    fn unclipped(&self, state: &[f64]) -> Vec<f64> {
        (0..ACTION_DIM)
            .map(|j| {
                let y = (state[j] - self.state_center[j]) / self.state_scale[j];
                self.bias[j] + self.gain[j] * (self.target[j] - y)
            })
            .collect()
    }

    fn clip(&self, a: Vec<f64>) -> Vec<f64> {
        a.into_iter().enumerate().map(|(j, v)| v.clamp(self.action_low[j], self.action_high[j])).collect()
    }
}

impl Policy for BehaviorPolicy {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn mean_action(&self, state: &[f64]) -> Vec<f64> {
        self.clip(self.unclipped(state))
    }

    fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Vec<f64> {
        let a = self
            .unclipped(state)
            .into_iter()
            .map(|v| v + self.sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.clip(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn default_env_is_stable_and_valid() {
        let env = SyntheticClinicalCmdp::default();
        env.validate().unwrap();
        assert!(env.spectral_radius() < 1.0);
        // Dead region lies below the safety floor of the first cost.
        assert!(env.dead_floor < 0.92);
        let back = SyntheticClinicalCmdp::from_json(&env.to_json().unwrap()).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn noiseless_step_is_the_affine_map() {
        let env = SyntheticClinicalCmdp { sigma_env: 0.0, ..Default::default() };
        let s = env.denormalize(&[1.0, -1.0, 0.5, 2.0]);
        let step = env.step(&s, &[1.0, 3.0], &mut rng_from(0)).unwrap();
        // The vaso dose is clipped to 2.
        let y0 = 0.5 * 1.0 - 0.5 * 0.5 + 0.4 * 1.0 + 0.1 * 2.0 - 0.65;
        let y2 = 0.99 * 0.5 + 0.01;
        let y = env.normalize(&step.next_state);
        assert!((y[0] - y0).abs() < 1e-12 && (y[2] - y2).abs() < 1e-12);
        assert!(!step.dead);
    }

    #[test]
    fn behavior_actions_stay_in_box() {
        let env = SyntheticClinicalCmdp::default();
        let b = BehaviorPolicy::standard(&env);
        let mut rng = rng_from(4);
        for v in [-30.0, -2.0, 0.0, 5.0, 40.0] {
            let s = env.denormalize(&[v, -v, 0.0, 0.0]);
            let a = b.sample_action(&s, &mut rng);
            assert!(env.in_box(&env.initial_mean, &a), "{a:?}");
        }
    }
}
