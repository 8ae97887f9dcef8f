use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("{op} did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence {
        op: &'static str,
        sweeps: usize,
        residual: f64,
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (failing pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("Newton-Schulz iterate diverged at iteration {iteration} (Frobenius norm {norm:e})")]
    Divergence { iteration: usize, norm: f64 },
    #[error("row {row} has zero norm")]
    DegenerateRow { row: usize },
    #[error("spectrum has zero total energy")]
    DegenerateSpectrum,
    #[error("runs share no (family, depth, step) lattice points")]
    Alignment,
    #[error("snapshot selection is empty")]
    EmptySelection,
    #[error("batch size {0} is too small for this operation")]
    BatchSize(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown parameter block `{0}` (optimizer registry is sealed)")]
    Registry(String),
    #[error("forward cache does not belong to this model state and batch")]
    StaleCache,
    #[error("classes without validation samples: {0:?}")]
    EmptyClasses(Vec<usize>),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
