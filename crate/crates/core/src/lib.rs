//! Offline guarded safe reinforcement learning.
//!
//! The crate turns a batch of logged trajectories into a guarded estimated
//! CMDP and optimizes a stochastic policy inside it:
//!
//! 1. fit a support guardian on the logged state-action pairs ([`guardian`]);
//! 2. fit nonparametric dynamics from the same data ([`models`]);
//! 3. run primal-dual policy search with an out-of-distribution cost
//!    constraint next to the safety cost constraints ([`policy`]);
//! 4. score the result with treatment-style metrics ([`metrics`]).
//!
//! [`synthetic`] provides a ground-truth environment so every step can be
//! checked against known dynamics and a known support.

pub mod error;
pub mod guardian;
pub mod mdp;
pub mod metrics;
pub mod models;
pub mod neighbors;
pub mod policy;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
