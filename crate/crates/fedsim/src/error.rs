//! Application-level errors and their process exit codes.

use std::path::PathBuf;

/// Everything the runner and CLI can fail with.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] fedsim_core::Error),
}

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn ingest(msg: impl Into<String>) -> Self {
        AppError::Ingest(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for runtime
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Core(core) if core.is_config() => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
