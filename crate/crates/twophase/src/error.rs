use crate::gmres::KrylovStats;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("zero or near-zero pivot at row {row} in {context}")]
    ZeroPivot { row: usize, context: &'static str },

    #[error("zero diagonal entry in A_ss at cell {cell}")]
    ZeroSaturationDiagonal { cell: usize },

    #[error("QR eigenvalue iteration failed to converge at index {0}")]
    QrNoConvergence(usize),

    #[error("eigenvalue residual check failed: |Av - lambda v| = {residual:.3e} exceeds {bound:.3e}")]
    EigenResidual { residual: f64, bound: f64 },

    #[error("problem size {0} exceeds the dense spectrum cap of {1} unknowns")]
    SpectrumSizeCap(usize, usize),

    #[error("Newton diverged at time step {step}: {reason}")]
    NewtonDiverged { step: usize, reason: String },

    #[error("linear solve failed at time step {step}, Newton iteration {newton}: \
             {iterations} iterations, relative residual {relative_residual:.3e}")]
    LinearSolveFailed {
        step: usize,
        newton: usize,
        iterations: usize,
        relative_residual: f64,
        stats: KrylovStats,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid scenario: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
