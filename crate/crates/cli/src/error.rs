//! CLI error wrapper carrying the documented exit-code contract:
//! 0 success, 2 config error, 3 empty pipeline, 4 numeric failure,
//! 5 tolerance failure.

use realign::Error;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// A check ran to completion but a verified quantity missed its bound.
    Tolerance(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Serde(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Tolerance(msg) => write!(f, "tolerance failure: {msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Tolerance(_) => 5,
            CliError::Core(e) => match e {
                Error::Empty(_) | Error::EmptyPipeline { .. } => 3,
                Error::NonFinite { .. } => 4,
                _ => 2,
            },
        }
    }
}
