use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or unreadable configuration, including its input files.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(#[from] uot::Error),

    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Process exit status: 2 for configuration errors, 3 for solver
    /// failures, 1 when results could not be written.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Output { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
