//! Stream derivation for reproducible randomness.
//!
//! Every random draw in training and evaluation is keyed by a base seed plus
//! a position (epoch, step, sample, copy). Re-deriving from the position
//! rather than carrying generator state makes interrupted runs resumable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream at `path` under `seed`.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(seed ^ 0x9e37_79b9_7f4a_7c15), |acc, &p| mix(acc ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

pub fn rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}
