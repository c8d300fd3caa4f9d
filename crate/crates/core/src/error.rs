use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KtulaError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid neural-net objective spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value produced by {evaluator}")]
    Overflow { evaluator: &'static str },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("iterate diverged at step {step}")]
    Diverged { step: usize },

    #[error("all {n_chains} chains diverged (first divergent steps: {first_steps:?})")]
    AllChainsDiverged {
        n_chains: usize,
        first_steps: Vec<Option<usize>>,
    },

    #[error("initial-law moment E|theta_0|^{order} is not available")]
    MissingMoment { order: u32 },

    #[error("extent error: {0}")]
    Extent(String),

    #[error("rate fit error: {0}")]
    Fit(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KtulaError {
    fn from(e: std::io::Error) -> Self {
        KtulaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KtulaError>;
