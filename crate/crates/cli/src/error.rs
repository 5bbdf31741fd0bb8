//! Command failures and their exit codes.

use codesign::Error;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_PRECONDITION: i32 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
    /// Structured context printed after the message, such as a cycle dump.
    pub detail: Option<serde_json::Value>,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { code: EXIT_VALIDATION, message: message.into(), detail: None }
    }

    pub fn not_converged(message: impl Into<String>) -> Self {
        CliError { code: EXIT_NOT_CONVERGED, message: message.into(), detail: None }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::ZeroMass
            | Error::SingularM
            | Error::Singular(_) => EXIT_VALIDATION,
            Error::NotConverged(_) | Error::Oscillation(_) => EXIT_NOT_CONVERGED,
            Error::DegenerateOutsideMass(_)
            | Error::DegeneratePi(_)
            | Error::Infeasible
            | Error::NotExchangeable
            | Error::Unsupported(_) => EXIT_PRECONDITION,
        };
        let detail = match &e {
            Error::Oscillation(cycle) => Some(serde_json::json!({ "cycle": cycle })),
            _ => None,
        };
        CliError { code, message: e.to_string(), detail }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            CliError::validation(format!("cannot write report: {e}"))
        } else {
            CliError::validation(format!("malformed JSON: {e}"))
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::validation(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
