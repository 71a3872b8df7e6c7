//! Polynomial sum-of-squares sublevel-set guardian.
//!
//! `q(x) = e(x)^T P e(x)` with `P = L L^T`, accepted set `{x : q(x) <= 1}`.
//! Fitting minimizes `log det P^{-1}` subject to at most an `alpha_c`
//! fraction of the fitting points having `q > 1`, with the indicator
//! replaced by a logistic surrogate and the constraint enforced by a
//! quadratic penalty whose weight doubles until the hard count holds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::MonomialBasis;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsosConfig {
    /// Logistic surrogate slope.
    pub kappa: f64,
    /// Gradient iterations per penalty stage.
    pub max_iterations: usize,
    /// Relative objective change that ends a stage.
    pub tolerance: f64,
    pub initial_penalty: f64,
    pub max_doublings: usize,
}

impl Default for PsosConfig {
    fn default() -> Self {
        PsosConfig { kappa: 25.0, max_iterations: 2000, tolerance: 1e-6, initial_penalty: 1e4, max_doublings: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitReport {
    /// `-log det P` of the returned factor.
    pub objective: f64,
    /// Fraction of fitting points with `q > 1`.
    pub outlier_fraction: f64,
    pub iterations: usize,
    pub penalty_weight: f64,
    pub penalty_stages: usize,
    /// Penalized objective of every accepted iterate, one list per stage.
    #[serde(skip)]
    pub stage_traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsosClassifier {
    pub basis: MonomialBasis,
    /// Lower-triangular `L`, row-major, `term_count x term_count`.
    pub gram_factor: Vec<f64>,
    pub alpha_c: f64,
    #[serde(default)]
    pub fit_report: FitReport,
}

impl PsosClassifier {
    /// Build from an explicit factor; entries above the diagonal must be zero
    /// and the diagonal nonnegative.
    pub fn from_factor(basis: MonomialBasis, gram_factor: Vec<f64>, alpha_c: f64) -> Result<Self> {
        let t = basis.term_count();
        check_dim(t * t, gram_factor.len())?;
        let c = PsosClassifier { basis, gram_factor, alpha_c, fit_report: FitReport::default() };
        c.validate()?;
        Ok(c)
    }

    /// Classifier whose Gram matrix is `diag(values)`.
    pub fn from_diagonal(basis: MonomialBasis, values: &[f64], alpha_c: f64) -> Result<Self> {
        let t = basis.term_count();
        check_dim(t, values.len())?;
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("diagonal Gram entries must be nonnegative".into()));
        }
        let mut l = vec![0.0; t * t];
        for (i, v) in values.iter().enumerate() {
            l[i * t + i] = v.sqrt();
        }
        Self::from_factor(basis, l, alpha_c)
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        let t = self.basis.term_count();
        check_dim(t * t, self.gram_factor.len())?;
        for i in 0..t {
            for j in 0..t {
                let v = self.gram_factor[i * t + j];
                if !v.is_finite() || (j > i && v != 0.0) || (i == j && v < 0.0) {
                    return Err(Error::InvalidInput("gram factor must be lower triangular with nonnegative diagonal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn term_count(&self) -> usize {
        self.basis.term_count()
    }

    /// `P = L L^T`.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let t = self.term_count();
        let l = DMatrix::from_row_slice(t, t, &self.gram_factor);
        &l * l.transpose()
    }

    /// `q(x) = ||L^T e(x)||^2`, the numerically preferred form of `e^T P e`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let e = self.basis.embed(x)?;
        Ok(self.eval_embedded(&e))
    }

    fn eval_embedded(&self, e: &[f64]) -> f64 {
        let t = e.len();
        let mut q = 0.0;
        for j in 0..t {
            let mut v = 0.0;
            for i in j..t {
                v += self.gram_factor[i * t + j] * e[i];
            }
            q += v * v;
        }
        q
    }

    /// `-log det P` from the factor diagonal.
    pub fn neg_log_det(&self) -> f64 {
        let t = self.term_count();
        -2.0 * (0..t).map(|i| self.gram_factor[i * t + i].ln()).sum::<f64>()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Penalized volume objective over a whitened embedding.
///
/// The fit works in the coordinates `w_i = L0^T e_i`, where `L0` is the
/// initial factor, and optimizes a lower-triangular `U` with `L = L0 U`.
struct Problem<'a> {
    whitened: &'a DMatrix<f64>,
    kappa: f64,
    alpha_c: f64,
    log_det_l0: f64,
}

struct Evaluation {
    value: f64,
    gradient: DMatrix<f64>,
}

impl Problem<'_> {
    fn q_values(&self, u: &DMatrix<f64>) -> DVector<f64> {
        let v = self.whitened * u;
        DVector::from_iterator(v.nrows(), v.row_iter().map(|r| r.norm_squared()))
    }

    fn value(&self, u: &DMatrix<f64>, penalty: f64) -> f64 {
        if (0..u.nrows()).any(|i| !(u[(i, i)] > 0.0)) {
            return f64::INFINITY;
        }
        let q = self.q_values(u);
        let n = q.len() as f64;
        let surrogate = q.iter().map(|&qi| sigmoid(self.kappa * (qi - 1.0))).sum::<f64>() / n;
        let excess = (surrogate - self.alpha_c).max(0.0);
        self.neg_log_det(u) + penalty * excess * excess
    }

    fn neg_log_det(&self, u: &DMatrix<f64>) -> f64 {
        -self.log_det_l0 - 2.0 * (0..u.nrows()).map(|i| u[(i, i)].ln()).sum::<f64>()
    }

    fn evaluate(&self, u: &DMatrix<f64>, penalty: f64) -> Evaluation {
        let t = u.nrows();
        let v = self.whitened * u;
        let n = v.nrows() as f64;
        let mut surrogate = 0.0;
        let mut weights = DVector::zeros(v.nrows());
        for (i, row) in v.row_iter().enumerate() {
            let s = sigmoid(self.kappa * (row.norm_squared() - 1.0));
            surrogate += s;
            weights[i] = self.kappa * s * (1.0 - s);
        }
        surrogate /= n;
        let excess = (surrogate - self.alpha_c).max(0.0);
        let mut gradient = DMatrix::zeros(t, t);
        if excess > 0.0 {
            // dS/dU = (2/N) W^T diag(weights) V
            let mut weighted = v.clone();
            for (i, mut row) in weighted.row_iter_mut().enumerate() {
                row *= weights[i];
            }
            gradient = self.whitened.transpose() * weighted * (2.0 / n * 2.0 * penalty * excess);
        }
        for i in 0..t {
            gradient[(i, i)] -= 2.0 / u[(i, i)];
            for j in i + 1..t {
                gradient[(i, j)] = 0.0;
            }
        }
        Evaluation { value: self.neg_log_det(u) + penalty * excess * excess, gradient }
    }

    fn hard_fraction(&self, u: &DMatrix<f64>) -> f64 {
        let q = self.q_values(u);
        q.iter().filter(|&&qi| qi > 1.0).count() as f64 / q.len() as f64
    }
}

/// Fit the minimum-volume sublevel set covering all but an `alpha_c`
/// fraction of `points` (standardized state-action vectors).
pub fn fit_psos(points: &[Vec<f64>], degree: u32, alpha_c: f64, config: &PsosConfig) -> Result<PsosClassifier> {
    if !(alpha_c > 0.0 && alpha_c < 1.0) {
        return Err(Error::InvalidInput(format!("alpha_c must lie in (0,1), got {alpha_c}")));
    }
    let dim = points.first().map(Vec::len).ok_or_else(|| Error::InvalidInput("no points".into()))?;
    let basis = MonomialBasis::new(dim, degree)?;
    let t = basis.term_count();
    let n = points.len();

    let mut distinct: Vec<&Vec<f64>> = points.iter().collect();
    distinct.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if n < t || distinct.len() < t {
        return Err(Error::UnderDetermined { samples: distinct.len().min(n), parameters: t });
    }

    let mut embedded = DMatrix::zeros(n, t);
    let mut buf = vec![0.0; t];
    for (i, p) in points.iter().enumerate() {
        check_dim(dim, p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite point".into()));
        }
        basis.embed_into(p, &mut buf);
        embedded.row_mut(i).copy_from_slice(&buf);
    }

    // Initial factor: inverse empirical moment matrix (Christoffel
    // polynomial), scaled so that an alpha_c fraction lies outside.
    let mut moment = embedded.transpose() * &embedded / n as f64;
    let ridge = 1e-10 * moment.trace() / t as f64;
    let mut chol = None;
    for attempt in 0..8 {
        let mut m = moment.clone();
        for i in 0..t {
            m[(i, i)] += ridge * 10f64.powi(attempt * 2);
        }
        if let Some(c) = m.cholesky() {
            chol = Some(c);
            break;
        }
    }
    let chol = chol.ok_or_else(|| Error::UnderDetermined { samples: n, parameters: t })?;
    moment = chol.inverse();
    let mut christoffel: Vec<f64> = embedded
        .row_iter()
        .map(|r| (r * &moment).dot(&r))
        .collect();
    christoffel.sort_by(f64::total_cmp);
    let allowed_out = (alpha_c * n as f64).floor() as usize;
    let scale = christoffel[n - 1 - allowed_out.min(n - 1)].max(f64::MIN_POSITIVE);
    let l0 = (moment / scale)
        .cholesky()
        .ok_or_else(|| Error::UnderDetermined { samples: n, parameters: t })?
        .l();
    let log_det_l0 = 2.0 * (0..t).map(|i| l0[(i, i)].ln()).sum::<f64>();
    let whitened = &embedded * &l0;
    let problem = Problem { whitened: &whitened, kappa: config.kappa, alpha_c, log_det_l0 };

    let mut u = DMatrix::<f64>::identity(t, t);
    let mut penalty = config.initial_penalty;
    let mut stage_traces = Vec::new();
    let mut iterations = 0usize;
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    let mut step = 1e-3;
    let mut stages = 0;
    loop {
        stages += 1;
        let mut trace = Vec::new();
        let mut current = problem.evaluate(&u, penalty);
        trace.push(current.value);
        for _ in 0..config.max_iterations {
            let grad_sq = current.gradient.norm_squared();
            if grad_sq == 0.0 || !grad_sq.is_finite() {
                break;
            }
            let mut accepted = None;
            let mut trial_step = step * 2.0;
            for _ in 0..60 {
                let candidate = &u - &current.gradient * trial_step;
                let value = problem.value(&candidate, penalty);
                if value <= current.value - 1e-4 * trial_step * grad_sq {
                    accepted = Some(candidate);
                    break;
                }
                trial_step *= 0.5;
            }
            let Some(candidate) = accepted else { break };
            iterations += 1;
            step = trial_step;
            u = candidate;
            let next = problem.evaluate(&u, penalty);
            let rel = (current.value - next.value).abs() / next.value.abs().max(1.0);
            current = next;
            trace.push(current.value);
            if rel < config.tolerance {
                break;
            }
        }
        stage_traces.push(trace);
        let fraction = problem.hard_fraction(&u);
        if best.as_ref().is_none_or(|(f, _)| fraction < *f || (fraction <= alpha_c && *f <= alpha_c)) {
            best = Some((fraction, u.clone()));
        }
        if fraction <= alpha_c || stages > config.max_doublings {
            break;
        }
        penalty *= 2.0;
    }

    let (fraction, u_best) = best.expect("at least one stage ran");
    let l = &l0 * &u_best;
    let mut factor = vec![0.0; t * t];
    for i in 0..t {
        for j in 0..=i {
            factor[i * t + j] = if i == j { l[(i, j)].abs() } else { l[(i, j)] };
        }
    }
    let mut classifier = PsosClassifier {
        basis,
        gram_factor: factor,
        alpha_c,
        fit_report: FitReport {
            objective: 0.0,
            outlier_fraction: fraction,
            iterations,
            penalty_weight: penalty,
            penalty_stages: stages,
            stage_traces,
        },
    };
    classifier.fit_report.objective = classifier.neg_log_det();
    if fraction > alpha_c + 0.01 {
        return Err(Error::InfeasibleFit { outlier_fraction: fraction, target: alpha_c, best: Box::new(classifier) });
    }
    Ok(classifier)
}
