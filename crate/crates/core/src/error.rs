use thiserror::Error;

/// Errors produced by allocators, solvers, generators and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid correlation: {0}")]
    InvalidCorrelation(String),

    #[error("matrix is not positive definite; condition number undefined")]
    NotPositiveDefinite,

    #[error("covariance is singular or not positive definite")]
    SingularCovariance,

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate universe: at least 2 assets required, got {0}")]
    DegenerateUniverse(usize),

    #[error("Schur block lost positive definiteness at depth {depth} (gamma = {gamma})")]
    SchurBreakdown { depth: usize, gamma: f64 },

    #[error("constraint set is infeasible: {0}")]
    Infeasible(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("unknown preset '{name}'; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("unknown method '{0}'")]
    UnknownMethod(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
