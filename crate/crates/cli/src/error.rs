use std::path::Path;

use pmlm::error::Error;
use thiserror::Error as ThisError;

/// A command failure, classified by exit code.
#[derive(Debug, ThisError)]
pub enum CliError {
    /// Bad configuration, unreadable input, or a failed write.
    #[error("{0}")]
    Input(String),
    /// Training or a numerical check blew up.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
