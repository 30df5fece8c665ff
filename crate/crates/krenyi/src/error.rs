use thiserror::Error;

/// Errors shared across the numerical and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix contains non-finite entries")]
    InvalidMatrix,

    #[error("matrix trace {trace} is not within 1e-6 of 1")]
    NotTraceNormalized { trace: f64 },

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue} below tolerance)")]
    NotPsd { eigenvalue: f64 },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("all pairwise distances are zero")]
    DegenerateSamples,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("argument out of domain: {0}")]
    DomainError(String),

    #[error("matrix is singular or not strictly positive definite")]
    NotInvertible,

    #[error("quadrature produced a non-finite integrand")]
    QuadratureFailure,

    #[error("dimension {dim} exceeds the supported maximum {max}")]
    TooLarge { dim: usize, max: usize },

    #[error("training diverged at step {step}")]
    DivergedTraining { step: usize },

    #[error("noise variance must be positive for this bound")]
    DegenerateNoise,

    #[error("format error at byte {offset}: {message}")]
    FormatError { offset: u64, message: String },

    #[error("eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
