use std::fmt;
use std::process::ExitCode;

use serde_json::Value;

/// Everything that ends a run early. Exit codes: 1 for numeric or domain
/// failures that carry a witness, 2 for usage and configuration errors.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config { pointer: Option<String>, message: String },
    Failure { message: String, report: Value },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn config(pointer: impl Into<String>, message: impl fmt::Display) -> Self {
        CliError::Config {
            pointer: Some(pointer.into()),
            message: message.to_string(),
        }
    }

    pub fn failure(message: impl Into<String>, report: Value) -> Self {
        CliError::Failure {
            message: message.into(),
            report,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Failure { .. } => ExitCode::from(1),
            _ => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Config { pointer: Some(p), message } => write!(f, "config error at {p}: {message}"),
            CliError::Config { pointer: None, message } => write!(f, "config error: {message}"),
            CliError::Failure { message, .. } => write!(f, "{message}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wrap any displayable error as a usage error.
pub fn usage<E: fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}
