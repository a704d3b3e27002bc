use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants split into two families that the CLI maps onto distinct exit
/// codes: input problems (bad shapes, bad parameters, unparseable files) and
/// numeric failures (non-finite values, breakdown of a factorization).
#[derive(Debug, Error)]
pub enum KmcError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered at point {index}: {what}")]
    NonFinite { index: usize, what: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl KmcError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        KmcError::InvalidInput(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        KmcError::Numeric(msg.into())
    }

    /// True for failures caused by numerics rather than by the caller's input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, KmcError::NonFinite { .. } | KmcError::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, KmcError>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(KmcError::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(KmcError::invalid(format!("{name} must be positive and finite, got {value}")));
    }
    Ok(())
}
