//! Estimated dynamics and rule-based reward/cost functions.
//!
//! Rollouts use the kNN successor model; the kernel conditional density is
//! kept for diagnostics and consistency checks.

mod kde;
mod knn;
mod rules;

pub use kde::KdeConditionalDensity;
pub use knn::{KnnConfig, KnnTransitionModel, Weighting};
pub use rules::{evaluate_costs, evaluate_reward, CostRule, CostRules, RewardRule};
