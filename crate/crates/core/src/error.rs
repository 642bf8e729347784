use std::path::PathBuf;

/// Errors produced by the enhancement engine and its file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty spectrogram")]
    EmptySpectrogram,

    #[error("visual embeddings required in mode {0}")]
    VisualsRequired(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 validation, 3 I/O, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Wav { .. } => 3,
            Error::NonFinite(_) => 4,
            _ => 2,
        }
    }
}
