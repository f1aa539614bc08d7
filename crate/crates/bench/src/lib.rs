//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terawht_core::Signal;

/// Time-domain `i64` signal of dimension `2^n` with samples in `[-8, 8]`.
pub fn random_int_signal(n: u32, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..1usize << n).map(|_| rng.random_range(-8..=8)).collect();
    Signal::time_i64(data).expect("power-of-two length")
}

pub fn random_float_signal(n: u32, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..1usize << n)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Signal::time_f64(data).expect("power-of-two length")
}
