//! CMDP domain types, discounted-return arithmetic, Monte-Carlo value
//! estimation and the trajectory file formats.

mod dataset;
mod io;
mod rollout;
mod value;

pub use dataset::{
    OfflineDataset, Split, Standardization, Standardizer, Trajectory, TransitionSample,
};
pub use io::{read_dataset_csv, write_dataset_csv, DatasetMetadata};
pub use rollout::{
    rollout, CmdpSpec, InitialStates, Policy, RolloutPath, Step, TransitionModel,
};
pub use value::{discounted_return, horizon_tail_bound, mc_value, CompensatedSum, McEstimate};
