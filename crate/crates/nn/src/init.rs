//! Seeded parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Fills `values` with N(0, std^2) draws from a ChaCha8 stream.
pub fn normal(values: &mut [f32], std: f32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0f32, std).expect("finite standard deviation");
    values.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
}
