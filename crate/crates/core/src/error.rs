use thiserror::Error;

pub type Result<T, E = CatError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CatError {
    /// Non-finite arguments, empty histories and similar precondition failures.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported estimator: {0}")]
    UnsupportedEstimator(String),

    #[error("invalid item bank: {0}")]
    InvalidBank(String),

    #[error("item bank exhausted")]
    Exhausted,

    /// The request does not fit the session's current phase.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CatError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        CatError::Domain(msg.into())
    }
}
