//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised by the engine, the metrics and the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid model, selection, decode or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed caller input (out-of-range ids, bad spans, mismatched lengths).
    #[error("input error: {0}")]
    Input(String),

    /// The scripted backend has no entry for the requested forward pass.
    #[error("script error: {0}")]
    Script(String),

    /// Not enough generated tokens or records to compute a statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A construction invariant was violated internally.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path} (line {line}): {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("image encoding error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by files on disk rather than by configuration or logic.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Json { .. } | Error::Image { .. }
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
