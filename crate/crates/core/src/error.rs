use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cardinality {cardinality:.6e} exceeds cap {cap}")]
    CardinalityExceeded { cardinality: f64, cap: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("PSD factorization failed after diagonal jitter {max_jitter:e}")]
    FactorizationFailure { max_jitter: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("domain error: {0}")]
    DomainError(String),

    /// A value whose natural logarithm exceeds the representable range was requested in linear scale.
    #[error("overflow: log-value {log_value} is not representable in linear scale")]
    Overflow { log_value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
