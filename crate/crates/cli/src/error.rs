use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    /// An artifact was produced under a different configuration.
    #[error("{artifact} was written for config {found}, current config hashes to {expected}; rerun `{producer}`")]
    HashMismatch {
        artifact: PathBuf,
        expected: String,
        found: String,
        producer: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] d2g_core::Error),

    #[error("{0} oracle check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 1 for anything the user can fix in the invocation or config, 2 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::HashMismatch { .. } => 1,
            CliError::Io { .. } | CliError::Core(_) | CliError::VerifyFailed(_) => 2,
        }
    }
}
