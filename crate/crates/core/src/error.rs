use std::io;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A NaN or infinity appeared while evaluating the named layer.
    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("domain `{0}` is already registered")]
    DuplicateDomain(String),

    #[error("malformed dialog act: {0}")]
    MalformedAct(String),

    /// An operation was invoked in a state where it is not allowed.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse(err.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(err: toml::de::Error) -> Self {
        Error::Parse(err.to_string())
    }
}
