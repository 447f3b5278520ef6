use std::fmt;
use std::path::Path;

use online_laplace::Error as CoreError;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Numeric = 1,
    Usage = 2,
    Io = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { code: ExitCode::Usage, message: msg.into() }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self { code: ExitCode::Io, message: format!("{}: {err}", path.display()) }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Self { code: ExitCode::Numeric, message: msg.into() }
    }

    /// Runs whose artifacts were expected but not found.
    pub fn missing_artifacts(absent: &[String]) -> Self {
        Self {
            code: ExitCode::Io,
            message: format!("missing artifacts for {} run(s):\n  {}", absent.len(), absent.join("\n  ")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Io { .. } | CoreError::Parse { .. } | CoreError::MissingValue { .. } | CoreError::TooFewRows(_) => {
                ExitCode::Io
            }
            CoreError::InvalidConfig(_) => ExitCode::Usage,
            _ => ExitCode::Numeric,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
