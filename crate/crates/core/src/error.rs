use thiserror::Error;

use crate::data::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, lengths or hyperparameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data that violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// API misuse, e.g. seeding a backward pass from a non-scalar node.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate normalizer channel {channel}: min = max = {value}")]
    DegenerateChannel { channel: usize, value: f64 },

    #[error("correlation undefined: series has zero variance")]
    ZeroVariance,

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
