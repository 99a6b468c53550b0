use std::path::PathBuf;

use crate::sample::Backend;

/// Errors raised by the readout chain model.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("backend mismatch: expected {expected:?}, found {found:?}")]
    BackendMismatch { expected: Backend, found: Backend },

    #[error("bit layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("stream mismatch: {0}")]
    StreamMismatch(String),

    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("expected a real-valued stream, sample {index} has a nonzero Q component")]
    NotReal { index: usize },

    #[error("zero-magnitude I/Q sample at index {index}")]
    ZeroMagnitude { index: usize },

    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },

    #[error("unknown stage tap `{0}`")]
    UnknownTap(String),

    #[error("filter design failed: {0}")]
    FilterDesign(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::UnknownTap(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
