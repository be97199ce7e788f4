//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not fit the requested operation. `stage` names
    /// the network stage or primitive op, `detail` the offending axis.
    #[error("shape mismatch in {stage}: {detail}")]
    Shape { stage: &'static str, detail: String },

    /// A configuration invariant is violated.
    #[error("invalid config: {0}")]
    Config(String),

    /// A NaN or infinity reached a path that requires finite values.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A dataset or weight file is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A dataset operation received no usable samples.
    #[error("empty dataset: {0}")]
    EmptyData(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { stage, detail: detail.into() }
    }
}
