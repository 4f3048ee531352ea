//! Intertwinings of a stopped birth-and-death chain with fast and slow
//! pure-birth chains.
//!
//! The crate builds Markov kernels `K⁺` and `K⁻` with `K⁺ G = G⁺ K⁺` and
//! `G K⁻ = K⁻ G⁻`, where `G±` are pure-birth generators whose rates are the
//! eigenvalues of the stopped chain. It also provides hitting-time laws and a
//! simulation of the three chains coupled so that they reach the trap
//! together.

// NaN-rejecting comparisons and index loops over coupled arrays are deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coupling;
pub mod error;
pub mod intertwine;
pub mod model;
pub mod passage;
pub mod random;
pub mod spectral;
pub mod stats;
pub mod tridiag;

pub use coupling::{
    build_pair_coupling, build_triple_coupling, ensemble_report, simulate_triple,
    verify_pair_coupling, CoupledPath, EnsembleReport, PairCoupling, PairCouplingReport, PathEvent,
    TripleCoupling,
};
pub use error::{Error, Result};
pub use intertwine::{
    build_minus_chain, build_plus_chain, inductive_step_minus, inductive_step_plus,
    verify_intertwining, ChainReport, IntertwiningChain, Orientation, Side, Stage,
    StageResultMinus, StageResultPlus,
};
pub use model::{
    build_generator, compose_kernels, scaled_tolerance, BirthDeathSpec, KernelReport, MarkovKernel,
    TridiagonalGenerator, UpperViolation,
};
pub use passage::{
    hypo_cdf, hypo_sample, mixture_passage_law, transition_probabilities_on_grid,
    transition_probability, HypoexponentialLaw, MixturePassageLaw, TimeGrid, Uniformization,
};
pub use random::random_spec;
pub use spectral::{
    leading_eigenpair, minimal_eigenfunction, quasi_stationary, smallest_decay_rate,
    spectrum_oracle, LeadingEigenpair, MinimalEigenfunction, QuasiStationaryLaw, Spectrum,
};
