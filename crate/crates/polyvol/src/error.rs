use std::path::PathBuf;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported camera model '{0}' (supported: PINHOLE, SIMPLE_PINHOLE)")]
    UnsupportedCameraModel(String),

    #[error("image decode failed for {path}: {msg}")]
    ImageDecode { path: PathBuf, msg: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code convention: 2 for usage/input problems, 1 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::UnsupportedCameraModel(_)
            | Error::ImageDecode { .. }
            | Error::CheckpointMismatch(_)
            | Error::ShapeMismatch(_) => 2,
            Error::DegenerateParameter(_) | Error::Internal(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
