use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a shape or value precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A graph-convolution layer produced a non-finite value.
    #[error("non-finite value in graph convolution layer {layer}")]
    NonFinite { layer: usize },

    /// An on-disk artifact does not conform to its format.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// The synthetic generator could not satisfy its constraints.
    #[error("generation failed: {0}")]
    Generation(String),

    /// Training diverged.
    #[error("NaN loss at epoch {epoch} in {term} term")]
    NanLoss { epoch: usize, term: &'static str },

    /// A run configuration file is malformed.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
