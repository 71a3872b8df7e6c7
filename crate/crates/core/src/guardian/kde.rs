use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Density-threshold guardian: `x` is in-distribution when the kernel
/// density estimate at `x` is at least `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeGuardian {
    /// Standardized reference points, one row per sample.
    pub reference_points: Vec<Vec<f64>>,
    /// Per-dimension bandwidth of the product Gaussian kernel.
    pub bandwidth: Vec<f64>,
    pub threshold: f64,
    pub alpha: f64,
}

/// Scott's rule `N^{-1/(d+4)} * sd_j` per dimension.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = points.len();
    let d = points.first().map(Vec::len).unwrap_or(0);
    if n < 2 || d == 0 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|j| {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
            let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                Ok(factor * sd)
            } else {
                Err(Error::DegenerateBandwidth(format!("dimension {j} has zero spread")))
            }
        })
        .collect()
}

/// Product Gaussian kernel `prod_j phi((x_j - y_j)/h_j) / h_j`.
pub(crate) fn product_kernel(x: &[f64], y: &[f64], bandwidth: &[f64]) -> f64 {
    let mut expo = 0.0;
    let mut norm = 1.0;
    for ((a, b), h) in x.iter().zip(y).zip(bandwidth) {
        let z = (a - b) / h;
        expo += z * z;
        norm *= INV_SQRT_2PI / h;
    }
    norm * (-0.5 * expo).exp()
}

impl KdeGuardian {
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.bandwidth.len(), x.len())?;
        let sum: f64 = self.reference_points.iter().map(|p| product_kernel(x, p, &self.bandwidth)).sum();
        Ok(sum / self.reference_points.len() as f64)
    }

    /// Leave-one-out density at every reference point.
    pub fn loo_densities(&self) -> Vec<f64> {
        loo_densities(&self.reference_points, &self.bandwidth)
    }

    /// Fraction of reference points whose leave-one-out density is below `threshold`.
    pub fn outlier_fraction(&self) -> f64 {
        let d = self.loo_densities();
        d.iter().filter(|v| **v < self.threshold).count() as f64 / d.len() as f64
    }
}

fn loo_densities(points: &[Vec<f64>], bandwidth: &[f64]) -> Vec<f64> {
    let n = points.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    s += product_kernel(&points[i], p, bandwidth);
                }
            }
            s / (n - 1) as f64
        })
        .collect()
}

/// Calibrate a density threshold by bisection so that an `alpha` fraction of
/// the reference points (by leave-one-out density) fall below it.
pub fn fit_kde_guardian(points: &[Vec<f64>], alpha: f64, bandwidth: Option<Vec<f64>>) -> Result<KdeGuardian> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidInput("KDE guardian needs at least two points".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let d = points[0].len();
    for p in points {
        check_dim(d, p.len())?;
    }
    if points.iter().all(|p| *p == points[0]) {
        return Err(Error::DegenerateBandwidth("all reference points are identical".into()));
    }
    let bandwidth = match bandwidth {
        Some(h) => {
            check_dim(d, h.len())?;
            if h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::DegenerateBandwidth("bandwidth must be positive".into()));
            }
            h
        }
        None => scott_bandwidth(points)?,
    };
    let loo = loo_densities(points, &bandwidth);
    let p_out = |f: f64| loo.iter().filter(|v| **v < f).count() as f64 / n as f64;

    let mut lo = 0.0;
    let top = loo.iter().copied().fold(0.0, f64::max);
    let mut hi = top * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    for _ in 0..50 {
        if hi - lo < 1e-12 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if p_out(mid) > alpha {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(KdeGuardian { reference_points: points.to_vec(), bandwidth, threshold: lo, alpha })
}
