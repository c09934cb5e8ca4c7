use std::path::PathBuf;

use thiserror::Error;

/// Anything that stops a command. [`CliError::exit_code`] maps it to the
/// process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Command { context: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn command(context: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Command {
            context,
            message: err.to_string(),
        }
    }
}
