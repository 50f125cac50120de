use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BbsError {
    /// Shapes, channel counts or sizes that do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Malformed PPM/BFM/annotation content.
    #[error("format error: {0}")]
    Format(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A parameter combination the requested algorithm cannot honor.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl BbsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BbsError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, BbsError>;
