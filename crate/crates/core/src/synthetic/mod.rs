//! Ground-truth clinical-style CMDP for end-to-end checks.
//!
//! State `(v1, v2, z1, z2)`: two vitals in clinical-looking units and two
//! latent severity scores. Actions `(fluid, vaso)` live in a box. The
//! dynamics are affine in normalized coordinates plus Gaussian noise, and a
//! patient dies when `v1` drops below a hard floor.

mod env;
mod generate;

pub use env::{BehaviorPolicy, SupportOracle, SyntheticClinicalCmdp};
pub use generate::{generate_dataset, true_support_contains, true_value, GenerationConfig};
