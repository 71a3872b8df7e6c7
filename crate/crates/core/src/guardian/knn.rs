use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::neighbors::KdTree;
use crate::rng;

/// Distance guardian: `x` is out-of-distribution when its `k`-th nearest
/// reference point is farther than `radius_threshold`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "KnnGuardianData", into = "KnnGuardianData")]
pub struct KnnGuardian {
    pub k: usize,
    pub radius_threshold: f64,
    pub alpha: f64,
    tree: KdTree,
    reference_points: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct KnnGuardianData {
    reference_points: Vec<Vec<f64>>,
    k: usize,
    radius_threshold: f64,
    alpha: f64,
}

impl From<KnnGuardianData> for KnnGuardian {
    fn from(d: KnnGuardianData) -> Self {
        let dim = d.reference_points.first().map_or(0, Vec::len);
        KnnGuardian {
            k: d.k,
            radius_threshold: d.radius_threshold,
            alpha: d.alpha,
            tree: KdTree::new(dim, &d.reference_points),
            reference_points: d.reference_points,
        }
    }
}

impl From<KnnGuardian> for KnnGuardianData {
    fn from(g: KnnGuardian) -> Self {
        KnnGuardianData { reference_points: g.reference_points, k: g.k, radius_threshold: g.radius_threshold, alpha: g.alpha }
    }
}

impl PartialEq for KnnGuardian {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.radius_threshold == other.radius_threshold
            && self.alpha == other.alpha
            && self.reference_points == other.reference_points
    }
}

impl KnnGuardian {
    pub fn new(reference_points: Vec<Vec<f64>>, k: usize, radius_threshold: f64, alpha: f64) -> Result<Self> {
        if k == 0 || reference_points.len() < k {
            return Err(Error::InvalidInput(format!("need k >= 1 and at least k reference points (k = {k})")));
        }
        let dim = reference_points[0].len();
        for p in &reference_points {
            check_dim(dim, p.len())?;
        }
        Ok(KnnGuardian {
            k,
            radius_threshold,
            alpha,
            tree: KdTree::new(dim, &reference_points),
            reference_points,
        })
    }

    pub fn reference_points(&self) -> &[Vec<f64>] {
        &self.reference_points
    }

    /// Distance to the `k`-th nearest reference point.
    pub fn kth_distance(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.tree.dim(), x.len())?;
        self.tree
            .nearest(x, self.k)
            .last()
            .map(|p| p.1)
            .ok_or_else(|| Error::Model("empty kNN guardian index".into()))
    }
}

/// Split `points` into reference and calibration parts and set the radius to
/// the `(1 - alpha)` quantile of calibration `k`-th neighbor distances.
pub fn fit_knn_guardian(
    points: &[Vec<f64>],
    alpha: f64,
    k: usize,
    calibration_fraction: f64,
    seed: u64,
) -> Result<KnnGuardian> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if !(calibration_fraction > 0.0 && calibration_fraction < 1.0) {
        return Err(Error::InvalidInput("calibration fraction must lie in (0,1)".into()));
    }
    let n = points.len();
    let n_cal = ((n as f64) * calibration_fraction).round() as usize;
    if n_cal == 0 || n - n_cal < k.max(1) {
        return Err(Error::InvalidInput("not enough points for reference and calibration sets".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_from(rng::derive(seed, rng::tag::CALIBRATION, 0)));
    let (cal, reference) = idx.split_at(n_cal);
    let mut reference: Vec<usize> = reference.to_vec();
    reference.sort_unstable();
    let g = KnnGuardian::new(reference.iter().map(|&i| points[i].clone()).collect(), k, 0.0, alpha)?;
    let mut dists = cal.iter().map(|&i| g.kth_distance(&points[i])).collect::<Result<Vec<f64>>>()?;
    dists.sort_by(f64::total_cmp);
    let rank = (((1.0 - alpha) * n_cal as f64).ceil() as usize).clamp(1, n_cal);
    Ok(KnnGuardian { radius_threshold: dists[rank - 1], ..g })
}
