use thiserror::Error;

use crate::grid::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must be at least 2x2, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Shape, right: Shape },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("state layout does not match the regulariser")]
    StateMismatch,
    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("inner solve failed at outer iteration {iteration} for (alpha, beta) = ({alpha}, {beta}): {source}")]
    InnerSolveFailure {
        iteration: usize,
        alpha: f64,
        beta: f64,
        #[source]
        source: SolveError,
    },
}

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PGM at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

impl HarnessError {
    /// Process exit code: 2 for configuration problems, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Learn(_) | HarnessError::Solve(_) => 3,
            _ => 2,
        }
    }
}
