//! Fixtures shared by the benchmarks.

use intertwine_core::random::{corpus_seed, random_spec};
use intertwine_core::BirthDeathSpec;

/// Sizes covered by the per-size benchmarks.
pub const SIZES: [usize; 4] = [4, 8, 12, 24];

/// The first corpus spec of size `n`.
pub fn fixture(n: usize) -> BirthDeathSpec {
    random_spec(n, corpus_seed(n, 0)).expect("corpus spec")
}
