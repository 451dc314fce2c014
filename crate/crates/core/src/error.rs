use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the estimators, detectors and the Monte Carlo engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("density ratio is unbounded: {0}")]
    UnboundedRatio(String),

    #[error("divergence is infinite: {0}")]
    DivergenceInfinite(String),

    #[error("sample too small: {0}")]
    SampleTooSmall(String),

    #[error("reference distribution assigns zero mass to partition cell {cell} of {cells}")]
    ZeroMassCell { cell: usize, cells: usize },

    #[error("invalid likelihood at observation {index} (value {value}): {reason}")]
    InvalidLikelihood { index: usize, value: f64, reason: String },

    #[error("{field}: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("insufficient data for exponent fit: {0}")]
    InsufficientData(String),

    #[error("malformed input: {0}")]
    Input(String),

    #[error("trial {trial} of detector {detector} at n = {n}: {source}")]
    TrialFailed {
        detector: String,
        n: usize,
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("sequence {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::ConfigInvalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Attach the position of the offending element in a batch.
    pub fn at_index(self, index: usize) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(self),
        }
    }
}
