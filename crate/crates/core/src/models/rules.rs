use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Built-in reward rules, selected by name in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardRule {
    /// `1 / (1 + ||(s - center) / scale||^2)`, a health score in `(0, 1]`.
    InverseSquaredNorm { center: Vec<f64>, scale: Vec<f64> },
    Constant { value: f64 },
    Zero,
}

impl RewardRule {
    /// Upper bound `r_max` of the rule's range.
    pub fn max(&self) -> f64 {
        match self {
            RewardRule::InverseSquaredNorm { .. } => 1.0,
            RewardRule::Constant { value } => value.max(0.0),
            RewardRule::Zero => 0.0,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        match self {
            RewardRule::InverseSquaredNorm { center, scale } => {
                check_dim(state_dim, center.len())?;
                check_dim(state_dim, scale.len())?;
                if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config("reward scale must be positive and finite".into()));
                }
                Ok(())
            }
            RewardRule::Constant { value } if !(*value >= 0.0 && value.is_finite()) => {
                Err(Error::Config("constant reward must be finite and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One safety cost `c_j(s, a)` measuring how far a state feature violates a floor or ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostRule {
    /// `min(max, scale * max(0, threshold - s[feature]))`.
    BelowThreshold { feature: usize, threshold: f64, scale: f64, max: f64 },
    /// `min(max, scale * max(0, s[feature] - threshold))`.
    AboveThreshold { feature: usize, threshold: f64, scale: f64, max: f64 },
}

impl CostRule {
    pub fn max(&self) -> f64 {
        match self {
            CostRule::BelowThreshold { max, .. } | CostRule::AboveThreshold { max, .. } => *max,
        }
    }

    fn validate(&self, state_dim: usize) -> Result<()> {
        let (CostRule::BelowThreshold { feature, threshold, scale, max }
        | CostRule::AboveThreshold { feature, threshold, scale, max }) = self;
        if *feature >= state_dim {
            return Err(Error::Config(format!("cost feature {feature} out of range for state dim {state_dim}")));
        }
        if !(threshold.is_finite() && *scale > 0.0 && scale.is_finite() && *max > 0.0 && max.is_finite()) {
            return Err(Error::Config("cost rule needs finite threshold and positive scale and max".into()));
        }
        Ok(())
    }

    fn eval(&self, state: &[f64]) -> f64 {
        let (excess, scale, max) = match self {
            CostRule::BelowThreshold { feature, threshold, scale, max } => (threshold - state[*feature], scale, max),
            CostRule::AboveThreshold { feature, threshold, scale, max } => (state[*feature] - threshold, scale, max),
        };
        // NaN input maps to the bound rather than escaping it.
        (scale * excess.max(0.0)).clamp(0.0, *max)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostRules {
    pub rules: Vec<CostRule>,
}

impl CostRules {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn max(&self) -> Vec<f64> {
        self.rules.iter().map(CostRule::max).collect()
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        self.rules.iter().try_for_each(|r| r.validate(state_dim))
    }
}

/// Reward of taking `action` in `state`; rules here depend on the state only.
pub fn evaluate_reward(state: &[f64], _action: &[f64], rule: &RewardRule) -> f64 {
    match rule {
        RewardRule::InverseSquaredNorm { center, scale } => {
            let sq: f64 = state.iter().zip(center).zip(scale).map(|((s, c), k)| ((s - c) / k).powi(2)).sum();
            let r = 1.0 / (1.0 + sq);
            if r.is_nan() { 0.0 } else { r.clamp(0.0, 1.0) }
        }
        RewardRule::Constant { value } => *value,
        RewardRule::Zero => 0.0,
    }
}

pub fn evaluate_costs(state: &[f64], _action: &[f64], rules: &CostRules) -> Vec<f64> {
    rules.rules.iter().map(|r| r.eval(state)).collect()
}
