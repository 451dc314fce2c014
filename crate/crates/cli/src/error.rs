use outlierseq_core::Error;
use thiserror::Error as ThisError;

/// A failed invocation. Invalid input exits with 2, everything else with 1.
#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.into(),
            reason: one_line(&reason.into()),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(one_line(&message.into()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid { .. } => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn is_invalid_input(e: &Error) -> bool {
    match e {
        Error::ConfigInvalid { .. } | Error::InvalidParameter { .. } | Error::SampleTooSmall(_) | Error::Input(_) => {
            true
        }
        Error::AtIndex { source, .. } => is_invalid_input(source),
        _ => false,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigInvalid { field, reason } => CliError::invalid(field, reason),
            Error::InvalidParameter { name, reason } => CliError::invalid(name, reason),
            ref other if is_invalid_input(other) => CliError::invalid("input", other.to_string()),
            other => CliError::runtime(other.to_string()),
        }
    }
}

/// Collapse a possibly multi-line message so every error is one line.
pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub type CliResult<T> = std::result::Result<T, CliError>;
