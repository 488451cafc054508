use std::fmt;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Validation = 1,
    Runtime = 2,
    BoundViolation = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::Validation,
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::Runtime,
            message: message.to_string(),
        }
    }

    pub fn violation(message: impl fmt::Display) -> Self {
        CliError {
            code: ExitCode::BoundViolation,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e)
    }
}

/// Parameter problems are the caller's fault; everything else happened
/// while running.
impl From<fedinv_core::Error> for CliError {
    fn from(e: fedinv_core::Error) -> Self {
        use fedinv_core::Error::*;
        match e {
            InvalidParameter { .. }
            | DimensionMismatch { .. }
            | OverTrimmed { .. }
            | TooFewUpdates { .. }
            | Empty(_) => CliError::validation(e),
            _ => CliError::runtime(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
