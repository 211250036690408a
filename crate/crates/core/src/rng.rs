//! Seed derivation. Every random stream in the crate comes from a
//! [`ChaCha8Rng`] keyed by a base seed plus a list of stream tags, so runs
//! are reproducible and stages do not share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Stream tags used across the crate.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN_STEP: u64 = 3;
    pub const CLASSIFIER: u64 = 4;
    pub const EXPLORE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const AUDIT: u64 = 7;
    pub const HEATMAP: u64 = 8;
    pub const GRID: u64 = 9;
    pub const SUBSAMPLE: u64 = 10;
}
