use thiserror::Error;

use crate::scalar::Field;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("field mismatch: expected {expected}, found {found}")]
    FieldMismatch { expected: Field, found: Field },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("field {0} has no positive definite involution")]
    NotPositiveDefinite(Field),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("factorization budget exceeded: {0}")]
    FactorizationBudget(String),
    #[error("construction failure: {0}")]
    Construction(String),
    #[error("oracle failure at stage {stage}: {reason}")]
    Oracle { stage: usize, reason: String },
    #[error("certification failure, clause ({clause}): {reason}")]
    Certification { clause: u8, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 input, 2 assertion, 3 infeasibility, 4 construction.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Assertion(_) => 2,
            Error::Infeasible(_) | Error::FactorizationBudget(_) => 3,
            Error::Construction(_) | Error::Oracle { .. } | Error::Certification { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
