use thiserror::Error;

/// Errors produced by the construction and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rate specification: {0}")]
    InvalidSpec(String),

    #[error("birth rate b_{index} must be positive and finite, got {value}")]
    NonPositiveBirth { index: usize, value: f64 },

    #[error("death rate d_{index} must be nonnegative and finite, got {value}")]
    NegativeDeath { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("stage index {index} out of range for N = {top} ({reason})")]
    InvalidStage {
        index: usize,
        top: usize,
        reason: &'static str,
    },

    #[error("death-rate pattern violated: {0}")]
    StagePattern(String),

    #[error("state {state} out of range 0..={top}")]
    StateOutOfRange { state: usize, top: usize },

    #[error("inverse iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("positivity guard failed at {context}: {quantity}({index}) = {value:e}")]
    Positivity {
        context: String,
        quantity: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{check} residual {value:e} exceeds tolerance {tol:e}")]
    Residual { check: String, value: f64, tol: f64 },

    #[error("invalid probability kernel: {0}")]
    InvalidKernel(String),

    #[error("rates {first} and {second} are not distinct (relative gap {gap:e})")]
    DuplicateRates { first: f64, second: f64, gap: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coupling construction failed: {0}")]
    Coupling(String),

    #[error("simulated path {index} violates {invariant}: {path}")]
    PathInvariant {
        index: usize,
        invariant: &'static str,
        path: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
