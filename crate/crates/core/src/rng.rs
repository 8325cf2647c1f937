//! Seeded randomness.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value. Independent streams (initialization, shuffling per epoch, DP noise,
//! per-cell sweep seeds) are derived from a base seed with [`derive_seed`],
//! a SplitMix64 chain over the base seed and a list of integer tags.
//! Gaussian draws use `rand_distr::StandardNormal` (ziggurat method).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and an ordered list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Tag of the weight-initialization stream.
pub const STREAM_INIT: u64 = 1;
/// Tag of the per-epoch shuffling stream.
pub const STREAM_SHUFFLE: u64 = 2;
/// Tag of the DP noise stream.
pub const STREAM_NOISE: u64 = 3;
