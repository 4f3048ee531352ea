//! Seeded random rate specifications.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::BirthDeathSpec;

/// Lower end of the log-uniform rate range.
pub const RATE_MIN: f64 = 0.1;
/// Upper end of the log-uniform rate range.
pub const RATE_MAX: f64 = 10.0;

/// A stopped chain on `{0, ..., n}` with `b_1..b_n` and `d_1..d_{n-1}` drawn
/// log-uniformly from `[0.1, 10]` and `d_n = 0`.
///
/// Draws come from a ChaCha8 stream seeded with `seed`, births first.
pub fn random_spec(n: usize, seed: u64) -> Result<BirthDeathSpec> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (RATE_MIN.ln(), RATE_MAX.ln());
    let mut draw = || rng.random_range(lo..=hi).exp();
    let birth: Vec<f64> = (0..n).map(|_| draw()).collect();
    let mut death: Vec<f64> = (0..n - 1).map(|_| draw()).collect();
    death.push(0.0);
    BirthDeathSpec::stopped(birth, death)
}

/// Seed of the `i`-th spec of size `n` in the standard test corpus.
pub fn corpus_seed(n: usize, i: usize) -> u64 {
    ((n as u64) << 32) | i as u64
}

/// `count` random specs for each `n` in `sizes`, seeded by [`corpus_seed`].
pub fn corpus(sizes: impl IntoIterator<Item = usize>, count: usize) -> Result<Vec<BirthDeathSpec>> {
    let mut specs = Vec::new();
    for n in sizes {
        for i in 0..count {
            specs.push(random_spec(n, corpus_seed(n, i))?);
        }
    }
    Ok(specs)
}
