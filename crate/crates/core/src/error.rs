use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input makes the requested quantity undefined (e.g. NMSE against a zero channel).
    #[error("undefined input: {0}")]
    UndefinedInput(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("enumeration of {count} candidates exceeds the limit of {limit}")]
    LimitExceeded { count: u128, limit: u128 },

    #[error("no convergence: {0}")]
    NonConvergent(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
