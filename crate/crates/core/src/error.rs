use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SanasError>;

#[derive(Debug, Error)]
pub enum SanasError {
    /// Malformed graph description, shape mismatch or invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad caller input (wrong sample count, label out of range, empty sequence...).
    #[error("input error: {0}")]
    Input(String),
    /// NaN or infinity produced somewhere in the numeric path.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An API used in the wrong mode, e.g. backward on an argmax trace.
    #[error("usage error: {0}")]
    Usage(String),
    /// Checkpoint or prepared-data file with a bad layout.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SanasError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SanasError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for command-line front ends.
    pub fn exit_code(&self) -> u8 {
        match self {
            SanasError::Config(_) | SanasError::Usage(_) => 2,
            SanasError::Io { .. } => 3,
            SanasError::Numeric(_) => 4,
            SanasError::Format(_) | SanasError::Input(_) => 5,
        }
    }
}
