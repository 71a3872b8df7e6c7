use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{rollout, CmdpSpec, Policy, TransitionModel};
use crate::rng;

/// Kahan-Babuska compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        iter.into_iter().for_each(|v| acc.add(v));
        acc
    }
}

/// `sum_h gamma^h v_h`.
pub fn discounted_return(values: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("gamma must lie in (0,1], got {gamma}")));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value {bad}")));
    }
    let mut acc = CompensatedSum::default();
    let mut weight = 1.0;
    for v in values {
        acc.add(weight * v);
        weight *= gamma;
    }
    Ok(acc.value())
}

/// Truncation error of an `H`-step value: `gamma^{H+1} (2 - gamma) max / (1 - gamma)^2`.
pub fn horizon_tail_bound(gamma: f64, horizon: usize, diamond_max: f64) -> Result<f64> {
    if gamma == 1.0 {
        return Err(Error::DivisionByZero("horizon tail bound needs gamma < 1".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) || !(diamond_max >= 0.0) {
        return Err(Error::InvalidInput("need 0 < gamma < 1 and diamond_max >= 0".into()));
    }
    let exponent = i32::try_from(horizon + 1).unwrap_or(i32::MAX);
    Ok(gamma.powi(exponent) * (2.0 - gamma) * diamond_max / (1.0 - gamma).powi(2))
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// Mean and `sd / sqrt(n)` with the `n - 1` sample deviation.
    pub fn from_samples(samples: &[f64]) -> McEstimate {
        let n = samples.len();
        if n == 0 {
            return McEstimate { estimate: 0.0, std_error: 0.0 };
        }
        let mean = samples.iter().copied().collect::<CompensatedSum>().value() / n as f64;
        if n == 1 {
            return McEstimate { estimate: mean, std_error: 0.0 };
        }
        let ss = samples.iter().map(|v| (v - mean).powi(2)).collect::<CompensatedSum>().value();
        let sd = (ss / (n - 1) as f64).sqrt();
        McEstimate { estimate: mean, std_error: sd / (n as f64).sqrt() }
    }
}

/// Monte-Carlo value `E_{s~rho_0}[sum_{h<=H} gamma^h f(s_h, a_h)]`.
///
/// Rollout `i` uses seed `derive(seed, ROLLOUT, i)`; rollouts run in
/// parallel and are reduced in index order.
pub fn mc_value<P, M, F>(
    policy: &P,
    model: &M,
    f: F,
    spec: &CmdpSpec,
    n_rollouts: usize,
    seed: u64,
) -> Result<McEstimate>
where
    P: Policy + ?Sized,
    M: TransitionModel + ?Sized,
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    if n_rollouts == 0 {
        return Err(Error::InvalidInput("n_rollouts must be >= 1".into()));
    }
    let returns = (0..n_rollouts)
        .into_par_iter()
        .map(|i| {
            let path = rollout(policy, model, spec, rng::derive(seed, rng::tag::ROLLOUT, i as u64))?;
            let values: Vec<f64> =
                path.states.iter().zip(&path.actions).map(|(s, a)| f(s, a)).collect();
            discounted_return(&values, spec.gamma)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McEstimate::from_samples(&returns))
}
