use std::path::PathBuf;

/// Failures of the IO layer. Every variant that concerns a file names it.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Data {
        path: PathBuf,
        #[source]
        source: patsnd_core::Error,
    },
    #[error("{path}: incompatible file (format version {found}, expected {expected})")]
    IncompatibleCheckpoint {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: corrupt file: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] patsnd_core::Error),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        IoError::Parse {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, source: patsnd_core::Error) -> Self {
        IoError::Data {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        IoError::Corrupt {
            path: path.into(),
            reason: reason.to_string(),
        }
    }
}
