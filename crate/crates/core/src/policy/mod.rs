//! Gaussian policies, guarded estimated-CMDP rollouts and constrained
//! policy search.

mod ecmdp;
mod gaussian;
mod train;

pub use ecmdp::{
    estimate_constraint_values, guarded_rollouts, rollout_guarded, verify_chance_proxy, ChanceProxy,
    ConstraintEstimates, DiscountedReturns, GuardedEcmdp, GuardedTrajectory,
};
pub use gaussian::{Architecture, GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use train::{
    train_guarded, train_penalty, train_unconstrained, write_training_log, DualState, TrainConfig, TrainMode,
    TrainRecord, TrainResult,
};
