//! In-distribution guardians over standardized state-action pairs.
//!
//! Three learned classifiers share one verdict type: the polynomial
//! sublevel set ([`PsosClassifier`]), the density threshold
//! ([`KdeGuardian`]) and the k-th neighbor distance ([`KnnGuardian`]).
//! Scores exactly on the threshold count as in-distribution.

mod kde;
mod knn;
mod monomial;
mod psos;

pub use kde::{fit_kde_guardian, scott_bandwidth, KdeGuardian};
pub use knn::{fit_knn_guardian, KnnGuardian};
pub use monomial::{term_count, MonomialBasis};
pub use psos::{fit_psos, FitReport, PsosClassifier, PsosConfig};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mdp::Standardization;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardianVerdict {
    pub ood: bool,
    /// `q(x)`, density, or k-th neighbor distance.
    pub score: f64,
}

/// Anything that flags raw `(s, a)` pairs as out-of-distribution.
pub trait OodGuardian: Sync {
    fn verdict(&self, state: &[f64], action: &[f64]) -> Result<GuardianVerdict>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "parameters", rename_all = "snake_case")]
pub enum GuardianModel {
    Psos(PsosClassifier),
    Kde(KdeGuardian),
    Knn(KnnGuardian),
    /// Accepts (`ood = false`) or rejects everything.
    Constant { ood: bool },
}

impl GuardianModel {
    /// Classify a standardized point.
    pub fn classify(&self, x: &[f64]) -> Result<GuardianVerdict> {
        match self {
            GuardianModel::Psos(c) => {
                let score = c.eval(x)?;
                Ok(GuardianVerdict { ood: score > 1.0, score })
            }
            GuardianModel::Kde(g) => {
                let score = g.density(x)?;
                Ok(GuardianVerdict { ood: score < g.threshold, score })
            }
            GuardianModel::Knn(g) => {
                let score = g.kth_distance(x)?;
                Ok(GuardianVerdict { ood: score > g.radius_threshold, score })
            }
            GuardianModel::Constant { ood } => Ok(GuardianVerdict { ood: *ood, score: f64::from(u8::from(*ood)) }),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GuardianModel::Psos(_) => "psos",
            GuardianModel::Kde(_) => "kde",
            GuardianModel::Knn(_) => "knn",
            GuardianModel::Constant { .. } => "constant",
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            GuardianModel::Psos(c) => Some(c.basis.input_dim),
            GuardianModel::Kde(g) => Some(g.bandwidth.len()),
            GuardianModel::Knn(g) => g.reference_points().first().map(Vec::len),
            GuardianModel::Constant { .. } => None,
        }
    }
}

/// A fitted guardian together with the standardization of its inputs.
///
/// Serialized as `{"type": ..., "standardization": ..., "parameters": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guardian {
    pub standardization: Standardization,
    #[serde(flatten)]
    pub model: GuardianModel,
}

impl Guardian {
    pub fn new(standardization: Standardization, model: GuardianModel) -> Result<Self> {
        standardization.validate()?;
        if let Some(d) = model.input_dim() {
            check_dim(standardization.state_dim() + standardization.action_dim(), d)?;
        }
        Ok(Guardian { standardization, model })
    }

    pub fn accept_all(n: usize, m: usize) -> Self {
        Guardian { standardization: Standardization::identity(n, m), model: GuardianModel::Constant { ood: false } }
    }

    pub fn reject_all(n: usize, m: usize) -> Self {
        Guardian { standardization: Standardization::identity(n, m), model: GuardianModel::Constant { ood: true } }
    }

    /// Classify an already standardized point.
    pub fn classify(&self, x: &[f64]) -> Result<GuardianVerdict> {
        self.model.classify(x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Guardian = serde_json::from_str(text)?;
        if let GuardianModel::Psos(c) = &g.model {
            c.validate()?;
        }
        Guardian::new(g.standardization, g.model)
    }
}

impl OodGuardian for Guardian {
    fn verdict(&self, state: &[f64], action: &[f64]) -> Result<GuardianVerdict> {
        check_dim(self.standardization.state_dim(), state.len())?;
        check_dim(self.standardization.action_dim(), action.len())?;
        self.model.classify(&self.standardization.joint(state, action))
    }
}

/// Fraction of standardized `points` the guardian accepts.
pub fn empirical_coverage(guardian: &GuardianModel, points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidInput("coverage of an empty point set".into()));
    }
    let mut inside = 0usize;
    for p in points {
        if !guardian.classify(p)?.ood {
            inside += 1;
        }
    }
    Ok(inside as f64 / points.len() as f64)
}

/// Smallest `N` with `N > sqrt(log(1/delta) / (2 (alpha_c - alpha)))`.
pub fn required_sample_size(delta: f64, alpha_c: f64, alpha: f64) -> Result<u64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0,1), got {delta}")));
    }
    if !(alpha > 0.0) || !(alpha_c > alpha) {
        return Err(Error::InvalidInput(format!("need alpha_c > alpha > 0, got alpha_c = {alpha_c}, alpha = {alpha}")));
    }
    let bound = ((1.0 / delta).ln() / (2.0 * (alpha_c - alpha))).sqrt();
    Ok(bound.floor() as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sample_size_examples() {
        assert_eq!(required_sample_size(0.05, 0.10, 0.05).unwrap(), 6);
        assert_eq!(required_sample_size(0.5, 0.75, 0.25).unwrap(), 1);
        assert_eq!(required_sample_size(1.0 - 1e-15, 0.2, 0.1).unwrap(), 1);
        assert!(required_sample_size(0.05, 0.05, 0.05).is_err());
        assert!(required_sample_size(0.05, 0.01, 0.05).is_err());
    }

    proptest! {
        #[test]
        fn sample_size_monotone(delta in 0.001f64..0.99, alpha in 0.001f64..0.2, gap in 0.001f64..0.5, bump in 0.0f64..0.3) {
            let base = required_sample_size(delta, alpha + gap, alpha).unwrap();
            prop_assert!(required_sample_size(delta, alpha + gap + bump, alpha).unwrap() <= base);
            let d2 = (delta + bump).min(0.999);
            prop_assert!(required_sample_size(d2, alpha + gap, alpha).unwrap() <= base);
        }
    }

    #[test]
    fn boundary_counts_as_inside() {
        let basis = MonomialBasis::new(2, 1).unwrap();
        let c = PsosClassifier::from_diagonal(basis, &[1.0, 1.0, 1.0], 0.05).unwrap();
        let v = GuardianModel::Psos(c).classify(&[0.0, 0.0]).unwrap();
        assert_eq!((v.score, v.ood), (1.0, false));

        let g = KnnGuardian::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 1, 0.0, 0.1).unwrap();
        let v = GuardianModel::Knn(g).classify(&[1.0, 1.0]).unwrap();
        assert_eq!((v.score, v.ood), (0.0, false));

        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.1]).collect();
        let kde = fit_kde_guardian(&pts, 0.1, None).unwrap();
        let top = pts.iter().max_by(|a, b| kde.density(a).unwrap().total_cmp(&kde.density(b).unwrap())).unwrap().clone();
        assert!(!GuardianModel::Kde(kde).classify(&top).unwrap().ood);
    }

    #[test]
    fn constant_guardians_cover_all_or_nothing() {
        let pts = vec![vec![0.0, 1.0], vec![5.0, -3.0]];
        assert_eq!(empirical_coverage(&GuardianModel::Constant { ood: false }, &pts).unwrap(), 1.0);
        assert_eq!(empirical_coverage(&GuardianModel::Constant { ood: true }, &pts).unwrap(), 0.0);
        assert!(empirical_coverage(&GuardianModel::Constant { ood: true }, &[]).is_err());
    }

    #[test]
    fn envelope_round_trips() {
        let basis = MonomialBasis::new(2, 1).unwrap();
        let c = PsosClassifier::from_diagonal(basis, &[1.0, 2.0, 3.0], 0.05).unwrap();
        let g = Guardian::new(Standardization::identity(1, 1), GuardianModel::Psos(c)).unwrap();
        let text = g.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["type"], "psos");
        assert!(v.get("standardization").is_some() && v.get("parameters").is_some());
        assert_eq!(Guardian::from_json(&text).unwrap(), g);

        let knn = KnnGuardian::new(vec![vec![0.0, 0.0], vec![1.0, 0.5]], 1, 0.3, 0.1).unwrap();
        let g = Guardian::new(Standardization::identity(1, 1), GuardianModel::Knn(knn)).unwrap();
        let back = Guardian::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.verdict(&[1.0], &[0.5]).unwrap().score, 0.0);
    }

    #[test]
    fn classify_is_consistent_with_score() {
        let pts: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let models = vec![
            GuardianModel::Kde(fit_kde_guardian(&pts, 0.1, None).unwrap()),
            GuardianModel::Knn(fit_knn_guardian(&pts, 0.1, 3, 0.3, 1).unwrap()),
            GuardianModel::Psos(fit_psos(&pts, 1, 0.1, &PsosConfig::default()).unwrap()),
        ];
        for m in &models {
            for i in 0..200 {
                let x = vec![(i as f64 * 0.05) - 5.0, (i as f64 * 0.031).sin() * 2.0];
                let v = m.classify(&x).unwrap();
                let expected = match m {
                    GuardianModel::Psos(_) => v.score > 1.0,
                    GuardianModel::Kde(g) => v.score < g.threshold,
                    GuardianModel::Knn(g) => v.score > g.radius_threshold,
                    GuardianModel::Constant { ood } => *ood,
                };
                assert_eq!(v.ood, expected);
                assert_eq!(m.classify(&x).unwrap(), v);
            }
        }
    }
}
