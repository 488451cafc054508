use thiserror::Error;

/// Errors produced by the simulation and aggregation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trimming removes every value: n = {n}, trimmed per tail = {trim}")]
    OverTrimmed { n: usize, trim: usize },

    #[error("need at least {needed} updates for {what}, got {actual}")]
    TooFewUpdates {
        what: &'static str,
        needed: usize,
        actual: usize,
    },

    #[error(
        "inconclusive Monte Carlo sign estimate for client {client}: |mean| = {mean:.3e} <= 3 SE = {three_se:.3e}"
    )]
    Inconclusive { client: usize, mean: f64, three_se: f64 },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
