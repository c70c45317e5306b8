use std::path::PathBuf;

/// Errors produced by the editing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file did not follow the expected tensor file layout.
    #[error("format error: {0}")]
    Format(String),
    /// A tensor payload contained values the library refuses to hold (NaN/Inf, negatives in a map).
    #[error("data error: {0}")]
    Data(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Invalid configuration or a provider asked to do something it does not support.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("optimization diverged at iteration {iteration}: loss = {loss}")]
    Optimization { iteration: usize, loss: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
