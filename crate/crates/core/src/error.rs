use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaplError {
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite loss term `{term}` ({detail})")]
    NonFiniteLoss { term: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("row-stochasticity violated for client {client} at round {round}: {detail}")]
    MixingViolation {
        client: usize,
        round: usize,
        detail: String,
    },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for MaplError {
    fn from(e: std::io::Error) -> Self {
        MaplError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for MaplError {
    fn from(e: serde_json::Error) -> Self {
        MaplError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MaplError>;
