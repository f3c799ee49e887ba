use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypeError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// A statistic is undefined for the given data (constant input, zero variance, ...).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("insufficient {what}: need {needed}, have {available}")]
    Capacity { what: String, needed: usize, available: usize },

    #[error("evaluator {0} has not passed qualification")]
    Unqualified(String),

    #[error("evaluator {evaluator} was already assigned to run {run}")]
    BetweenSubjects { evaluator: String, run: String },

    #[error("cannot decode image: {0}")]
    Decode(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for HypeError {
    fn from(e: std::io::Error) -> Self {
        HypeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HypeError>;
