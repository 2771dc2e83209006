use thiserror::Error;

/// Errors surfaced by market construction, stability checks, enumeration,
/// estimation and the CLI harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("invalid matching: {0}")]
    InvalidMatching(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("instance too large for exact enumeration: n = {n} exceeds limit {limit}")]
    InstanceTooLarge { n: usize, limit: usize },

    #[error("estimate degenerate: {0}")]
    DegenerateEstimate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
