use std::path::PathBuf;

use rydfit_core::error::FitError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Model(#[from] FitError),

    #[error("numerical check failed: {0}")]
    Check(String),

    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad input (including unusable output paths), 3 for numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Model(e) if e.is_config() => 2,
            CliError::Model(_) | CliError::Check(_) => 3,
        }
    }
}
