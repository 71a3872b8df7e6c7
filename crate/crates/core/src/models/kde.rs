use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mdp::OfflineDataset;

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Kernel estimate of `p(s+ | x)` with `x = (s, a)`, as the ratio of a joint
/// and a marginal Gaussian kernel sum sharing one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeConditionalDensity {
    /// `(s+, x)` pairs.
    pub samples: Vec<(Vec<f64>, Vec<f64>)>,
    pub bandwidth: f64,
}

/// `log prod_j phi((a_j - b_j) / h)` without the `h^{-d}` factor.
fn log_kernel(a: &[f64], b: &[f64], h: f64) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) / h).powi(2)).sum();
    -0.5 * sq - a.len() as f64 * LOG_SQRT_2PI
}

impl KdeConditionalDensity {
    pub fn new(samples: Vec<(Vec<f64>, Vec<f64>)>, bandwidth: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput("conditional KDE needs at least two samples".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::DegenerateBandwidth(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let (ds, dx) = (samples[0].0.len(), samples[0].1.len());
        for (s, x) in &samples {
            check_dim(ds, s.len())?;
            check_dim(dx, x.len())?;
        }
        Ok(KdeConditionalDensity { samples, bandwidth })
    }

    /// Scott-style scalar bandwidth: `N^{-1/(d+4)}` times the mean per-dimension sd.
    pub fn scott_bandwidth(samples: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidInput("need at least two samples".into()));
        }
        let rows: Vec<Vec<f64>> = samples.iter().map(|(s, x)| s.iter().chain(x).copied().collect()).collect();
        let d = rows[0].len();
        let mean_sd = (0..d)
            .map(|j| {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            })
            .sum::<f64>()
            / d as f64;
        if !(mean_sd > 0.0) {
            return Err(Error::DegenerateBandwidth("samples have zero spread".into()));
        }
        Ok((n as f64).powf(-1.0 / (d as f64 + 4.0)) * mean_sd)
    }

    /// Standardized `(s+, (s, a))` pairs from every sample with an observed successor.
    pub fn from_dataset(ds: &OfflineDataset, bandwidth: Option<f64>) -> Result<Self> {
        let st = &ds.standardization;
        let samples: Vec<(Vec<f64>, Vec<f64>)> = ds
            .samples()
            .filter_map(|t| t.next_state.as_ref().map(|sp| (st.state.apply(sp), st.joint(&t.state, &t.action))))
            .collect();
        let h = match bandwidth {
            Some(h) => h,
            None => Self::scott_bandwidth(&samples)?,
        };
        Self::new(samples, h)
    }

    fn dims(&self) -> (usize, usize) {
        (self.samples[0].0.len(), self.samples[0].1.len())
    }

    /// `f(s, x) = 1/(N h^{ds+dx}) sum_i K((s - s_i)/h) K((x - x_i)/h)`.
    pub fn joint_density(&self, s: &[f64], x: &[f64]) -> Result<f64> {
        let (ds, dx) = self.dims();
        check_dim(ds, s.len())?;
        check_dim(dx, x.len())?;
        let h = self.bandwidth;
        let sum: f64 = self
            .samples
            .iter()
            .map(|(si, xi)| (log_kernel(s, si, h) + log_kernel(x, xi, h)).exp())
            .sum();
        Ok(sum / (self.samples.len() as f64 * h.powi((ds + dx) as i32)))
    }

    /// `f_X(x) = 1/(N h^{dx}) sum_i K((x - x_i)/h)`.
    pub fn marginal_density(&self, x: &[f64]) -> Result<f64> {
        let (_, dx) = self.dims();
        check_dim(dx, x.len())?;
        let h = self.bandwidth;
        let sum: f64 = self.samples.iter().map(|(_, xi)| log_kernel(x, xi, h).exp()).sum();
        Ok(sum / (self.samples.len() as f64 * h.powi(dx as i32)))
    }

    /// `p(s | x) = f(s, x) / f_X(x)`.
    pub fn conditional_density(&self, s: &[f64], x: &[f64]) -> Result<f64> {
        let marginal = self.marginal_density(x)?;
        if marginal < 1e-300 {
            return Err(Error::OutOfSupport(marginal));
        }
        Ok(self.joint_density(s, x)? / marginal)
    }
}
