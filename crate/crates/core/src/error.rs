use thiserror::Error;

#[derive(Debug, Error)]
pub enum PodsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration document or override could not be resolved. `key`
    /// names the offending entry when one can be identified.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PodsError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(PodsError::InvalidArgument(msg.into()))
}
