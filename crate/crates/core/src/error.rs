// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised by ingestion, feature computation, estimation and the oracle.
///
/// Variants fall in two families: malformed or invalid inputs, and requests
/// that are well-formed but cannot be computed on the given data (for example
/// asking for more neighbors than there are points). [`Error::is_input_error`]
/// tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("context {context:?} has {references} reference and {models} model examples")]
    Unpaired {
        context: String,
        references: usize,
        models: usize,
    },

    #[error("example {example_id:?} has no ratings")]
    EmptyRatings { example_id: String },

    #[error("example {example_id:?}: rating {score} outside [0, 5]")]
    ScoreOutOfRange { example_id: String, score: f64 },

    #[error("example {example_id:?}: {message}")]
    InvalidExample { example_id: String, message: String },

    #[error("text is empty")]
    EmptyText,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite feature value {0}")]
    NonFinite(f64),

    #[error("probability {0} is negative or not finite")]
    InvalidProbability(f64),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid rater model: {0}")]
    InvalidRaterModel(String),

    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("k = {k} requires more than {k} points, got {points}")]
    TooFewPoints { k: usize, points: usize },

    #[error("k must be at least 1")]
    ZeroK,

    #[error("need at least {required} rows, got {found}")]
    TooFewRows { required: usize, found: usize },

    #[error("requested {requested} {what} but only {available} available")]
    SampleTooLarge {
        what: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("{0}")]
    Precondition(String),

    #[error("quantizer has no cell for point ({p_human}, {p_model})")]
    NonTotalQuantizer { p_human: f64, p_model: f64 },

    #[error("map is not injective: ({0}, {1}) and ({2}, {3}) collide")]
    NotInjective(f64, f64, f64, f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error stems from malformed or invalid input data rather
    /// than from a computation that cannot be carried out on valid data.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Unpaired { .. }
                | Error::EmptyRatings { .. }
                | Error::ScoreOutOfRange { .. }
                | Error::InvalidExample { .. }
                | Error::EmptyText
                | Error::EmptyDataset
                | Error::InvalidProbability(_)
                | Error::InvalidDistribution(_)
                | Error::InvalidTemperature(_)
                | Error::InvalidRaterModel(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
