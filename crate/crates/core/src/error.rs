use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("exact decomposition search is capped at {cap} points, got {got}")]
    CapExceeded { cap: usize, got: usize },

    #[error("certificate construction failed: {reason} (condition estimate {condition:.3e})")]
    Construction { reason: String, condition: f64 },

    #[error("no passing separation constant in [{lo}, {hi}]")]
    RangeExhausted { lo: f64, hi: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
