use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mdp::{OfflineDataset, Policy, Standardization};
use crate::rng::{self, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Affine,
    /// One hidden `tanh` layer.
    Mlp { width: usize },
}

/// Diagonal Gaussian policy acting in standardized coordinates.
///
/// With `z = z(s)` and `u = z(a)`, `u ~ N(mu(z), diag(exp(log_std))^2)`.
/// Layout of `theta`: affine `[W (m x n), b (m)]`; MLP
/// `[W1 (w x n), b1 (w), W2 (m x w), b2 (m)]`, all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPolicy {
    pub architecture: Architecture,
    pub theta: Vec<f64>,
    pub log_std: Vec<f64>,
    pub standardization: Standardization,
}

struct Forward {
    mean: Vec<f64>,
    hidden: Vec<f64>,
}

impl GaussianPolicy {
    pub fn mean_param_count(architecture: Architecture, n: usize, m: usize) -> usize {
        match architecture {
            Architecture::Affine => m * n + m,
            Architecture::Mlp { width } => width * n + width + m * width + m,
        }
    }

    pub fn new(
        architecture: Architecture,
        theta: Vec<f64>,
        log_std: Vec<f64>,
        standardization: Standardization,
    ) -> Result<Self> {
        let p = GaussianPolicy { architecture, theta, log_std, standardization };
        p.validate()?;
        Ok(GaussianPolicy { log_std: p.log_std.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(), ..p })
    }

    pub fn validate(&self) -> Result<()> {
        self.standardization.validate()?;
        let (n, m) = (self.standardization.state_dim(), self.standardization.action_dim());
        if let Architecture::Mlp { width: 0 } = self.architecture {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        check_dim(Self::mean_param_count(self.architecture, n, m), self.theta.len())?;
        check_dim(m, self.log_std.len())?;
        if self.theta.iter().chain(&self.log_std).any(|v| !v.is_finite()) {
            return Err(Error::Model("policy parameters must be finite".into()));
        }
        Ok(())
    }

    /// Behavior cloning by least squares of `z(a)` on `z(s)` (affine) or on
    /// random `tanh` features (MLP), with `log_std` from the residual spread.
    pub fn behavior_cloning(ds: &OfflineDataset, architecture: Architecture, seed: u64) -> Result<Self> {
        let st = ds.standardization.clone();
        let (n, m) = (ds.state_dim, ds.action_dim);
        let inputs: Vec<Vec<f64>> = ds.samples().map(|t| st.state.apply(&t.state)).collect();
        let targets: Vec<Vec<f64>> = ds.samples().map(|t| st.action.apply(&t.action)).collect();
        if inputs.len() < n + 2 {
            return Err(Error::Data("too few samples for behavior cloning".into()));
        }
        let (features, hidden_params) = match architecture {
            Architecture::Affine => (inputs.clone(), Vec::new()),
            Architecture::Mlp { width } => {
                let mut rng = rng::rng_from(rng::derive(seed, rng::tag::INITIAL, 0));
                let w1: Vec<f64> =
                    (0..width * n).map(|_| rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt()).collect();
                let b1 = vec![0.0; width];
                let feats = inputs
                    .iter()
                    .map(|z| (0..width).map(|k| (dot(&w1[k * n..(k + 1) * n], z) + b1[k]).tanh()).collect())
                    .collect();
                (feats, [w1, b1].concat())
            }
        };
        let p = features[0].len();
        let rows = features.len();
        let x = DMatrix::from_fn(rows, p + 1, |i, j| if j < p { features[i][j] } else { 1.0 });
        let svd = x.clone().svd(true, true);
        let mut w_out = vec![0.0; m * p];
        let mut b_out = vec![0.0; m];
        let mut log_std = vec![0.0; m];
        for j in 0..m {
            let y = DVector::from_iterator(rows, targets.iter().map(|t| t[j]));
            let coef = svd.solve(&y, 1e-10).map_err(|e| Error::Model(e.to_string()))?;
            w_out[j * p..(j + 1) * p].copy_from_slice(&coef.as_slice()[..p]);
            b_out[j] = coef[p];
            let resid = &y - &x * &coef;
            let sd = (resid.norm_squared() / rows as f64).sqrt();
            log_std[j] = sd.max(1e-12).ln();
        }
        let theta = [hidden_params, w_out, b_out].concat();
        GaussianPolicy::new(architecture, theta, log_std, st)
    }

    pub fn num_params(&self) -> usize {
        self.theta.len() + self.log_std.len()
    }

    /// Flattened `theta ++ log_std`.
    pub fn params(&self) -> Vec<f64> {
        [self.theta.as_slice(), self.log_std.as_slice()].concat()
    }

    /// Set from a flattened vector; `log_std` is clamped into its range.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.num_params(), params.len())?;
        let k = self.theta.len();
        self.theta.copy_from_slice(&params[..k]);
        for (dst, v) in self.log_std.iter_mut().zip(&params[k..]) {
            *dst = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(())
    }

    fn dims(&self) -> (usize, usize) {
        (self.standardization.state_dim(), self.standardization.action_dim())
    }

    fn forward(&self, z: &[f64]) -> Forward {
        let (n, m) = self.dims();
        let t = &self.theta;
        match self.architecture {
            Architecture::Affine => Forward {
                mean: (0..m).map(|j| dot(&t[j * n..(j + 1) * n], z) + t[m * n + j]).collect(),
                hidden: Vec::new(),
            },
            Architecture::Mlp { width: w } => {
                let (w1, rest) = t.split_at(w * n);
                let (b1, rest) = rest.split_at(w);
                let (w2, b2) = rest.split_at(m * w);
                let hidden: Vec<f64> = (0..w).map(|k| (dot(&w1[k * n..(k + 1) * n], z) + b1[k]).tanh()).collect();
                let mean = (0..m).map(|j| dot(&w2[j * w..(j + 1) * w], &hidden) + b2[j]).collect();
                Forward { mean, hidden }
            }
        }
    }

    /// Mean action in standardized units.
    pub fn standardized_mean(&self, state: &[f64]) -> Vec<f64> {
        self.forward(&self.standardization.state.apply(state)).mean
    }

    /// `log pi(a | s)` as a density over raw actions.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        let st = &self.standardization;
        let mean = self.standardized_mean(state);
        let u = st.action.apply(action);
        (0..u.len())
            .map(|j| {
                let r = (u[j] - mean[j]) / self.log_std[j].exp();
                -0.5 * r * r - self.log_std[j] - HALF_LOG_2PI - st.action.scale[j].ln()
            })
            .sum()
    }

    /// Gradient of [`GaussianPolicy::log_prob`] with respect to [`GaussianPolicy::params`].
    pub fn log_prob_grad(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.num_params()];
        self.accumulate_log_prob_grad(state, action, 1.0, &mut g);
        g
    }

    /// `out += weight * grad log pi(a | s)`.
    pub fn accumulate_log_prob_grad(&self, state: &[f64], action: &[f64], weight: f64, out: &mut [f64]) {
        let (n, m) = self.dims();
        let z = self.standardization.state.apply(state);
        let u = self.standardization.action.apply(action);
        let fwd = self.forward(&z);
        // d/d mu_j and d/d log_std_j of the Gaussian log density.
        let mut g_mu = vec![0.0; m];
        let k = self.theta.len();
        for j in 0..m {
            let var = (2.0 * self.log_std[j]).exp();
            let diff = u[j] - fwd.mean[j];
            g_mu[j] = weight * diff / var;
            out[k + j] += weight * (diff * diff / var - 1.0);
        }
        match self.architecture {
            Architecture::Affine => {
                for j in 0..m {
                    for l in 0..n {
                        out[j * n + l] += g_mu[j] * z[l];
                    }
                    out[m * n + j] += g_mu[j];
                }
            }
            Architecture::Mlp { width: w } => {
                let w2 = &self.theta[w * n + w..w * n + w + m * w];
                let (o_w1, o_b1, o_w2, o_b2) = (0, w * n, w * n + w, w * n + w + m * w);
                for j in 0..m {
                    for h in 0..w {
                        out[o_w2 + j * w + h] += g_mu[j] * fwd.hidden[h];
                    }
                    out[o_b2 + j] += g_mu[j];
                }
                for h in 0..w {
                    let back: f64 = (0..m).map(|j| w2[j * w + h] * g_mu[j]).sum();
                    let pre = back * (1.0 - fwd.hidden[h] * fwd.hidden[h]);
                    for l in 0..n {
                        out[o_w1 + h * n + l] += pre * z[l];
                    }
                    out[o_b1 + h] += pre;
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: GaussianPolicy = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Policy for GaussianPolicy {
    fn state_dim(&self) -> usize {
        self.standardization.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.standardization.action_dim()
    }

    fn mean_action(&self, state: &[f64]) -> Vec<f64> {
        self.standardization.action.invert(&self.standardized_mean(state))
    }

    fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Vec<f64> {
        let u: Vec<f64> = self
            .standardized_mean(state)
            .into_iter()
            .zip(&self.log_std)
            .map(|(mu, ls)| mu + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.standardization.action.invert(&u)
    }
}
