use std::path::PathBuf;

use bbs_core::BbsError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DIMENSION: u8 = 4;
pub const EXIT_OTHER: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    /// Flag values that parse but do not make sense together.
    #[error("{0}")]
    Usage(String),
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] BbsError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                BbsError::Config(_) => EXIT_USAGE,
                // unreadable or malformed input files count as I/O failures
                BbsError::Io { .. } | BbsError::Format(_) => EXIT_IO,
                BbsError::Dimension(_) => EXIT_DIMENSION,
                _ => EXIT_OTHER,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let io = std::io::Error::from(std::io::ErrorKind::NotFound);
        assert_eq!(CliError::io("x", io).exit_code(), 3);
        assert_eq!(CliError::Usage("bad".into()).exit_code(), 2);
        assert_eq!(CliError::from(BbsError::Config("c".into())).exit_code(), 2);
        assert_eq!(CliError::from(BbsError::Dimension("d".into())).exit_code(), 4);
        assert_eq!(CliError::from(BbsError::Format("f".into())).exit_code(), 3);
        assert_eq!(CliError::from(BbsError::Numeric("n".into())).exit_code(), 1);
    }
}
