use std::path::Path;

use regionret_core::format::FormatError;
use thiserror::Error;

/// Failure of a subcommand. The variant fixes the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Invalid(_) => 1,
            Self::Io(_) => 2,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }

    /// Prefixes the message with `context`, keeping the exit code.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            Self::Usage(m) => Self::Usage(format!("{context}: {m}")),
            Self::Invalid(m) => Self::Invalid(format!("{context}: {m}")),
            Self::Io(m) => Self::Io(format!("{context}: {m}")),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<regionret_core::Error> for CliError {
    fn from(e: regionret_core::Error) -> Self {
        Self::Invalid(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
