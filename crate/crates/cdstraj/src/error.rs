use std::path::PathBuf;

/// Recoverable pipeline errors. Contract violations (shape mismatches,
/// non-finite values, invalid hyperparameters) panic instead; the CLI maps
/// panics to exit code 1 and these errors to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum CdsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("data format error at {path}:{line}: {msg}")]
    DataFormat { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl CdsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CdsError>;
