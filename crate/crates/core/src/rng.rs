//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! 64-bit seed. Child seeds are derived by mixing `(parent, tag, index)`
//! through SplitMix64 finalizers, so work can be split over rollouts or
//! workers without sharing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ tag.rotate_left(17)) ^ index.rotate_left(41))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags so that different consumers of one seed never collide.
pub mod tag {
    pub const ROLLOUT: u64 = 0x524f_4c4c;
    pub const INITIAL: u64 = 0x494e_4954;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const GRADIENT: u64 = 0x4752_4144;
    pub const EVAL: u64 = 0x4556_414c;
    pub const LINE_SEARCH: u64 = 0x4c53_4541;
    pub const CALIBRATION: u64 = 0x4341_4c42;
    pub const GENERATE: u64 = 0x4745_4e45;
    pub const SUPPORT: u64 = 0x5355_5050;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let a = derive(7, tag::ROLLOUT, 0);
        let b = derive(7, tag::ROLLOUT, 1);
        let c = derive(7, tag::EVAL, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive(7, tag::ROLLOUT, 0));
    }

    #[test]
    fn same_seed_same_stream() {
        let mut r1 = rng_from(42);
        let mut r2 = rng_from(42);
        for _ in 0..16 {
            assert_eq!(r1.random::<u64>(), r2.random::<u64>());
        }
    }
}
