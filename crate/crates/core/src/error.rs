use thiserror::Error;

/// Errors surfaced by the auditors, evaluators and loaders.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("version space is empty")]
    EmptyVersionSpace,

    #[error("version space already has diameter at most 2*eps; no query needed")]
    NoQueryNeeded,

    #[error("oracle answers are inconsistent with every hypothesis in the class")]
    NonRealizableOracle,

    #[error("no hypothesis satisfies the hard constraints")]
    Infeasible,

    #[error("no feasible sample found after {attempts} attempts in round {round}")]
    FeasibilityTimeout { round: usize, attempts: usize },

    #[error("coordinate {coord}: labels at +beta and -beta agree, no sign change to search")]
    NoCrossing { coord: usize },

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("size limit exceeded: {what} = {got}, maximum {max}")]
    SizeLimit { what: &'static str, got: usize, max: usize },

    #[error("fewer than two distinct labelings after deduplication")]
    DegenerateClass,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AuditError>;
