use thiserror::Error;

/// Errors shared across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}{}", ctx_suffix(.context))]
    DimMismatch {
        expected: String,
        got: String,
        context: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context}{}", step_suffix(.step))]
    NonFinite { context: String, step: Option<usize> },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("plane lies outside the grid: {0}")]
    PlaneOutsideGrid(String),

    #[error("hd95 undefined: {0} mask is empty")]
    EmptyMask(&'static str),

    #[error("zero variance in paired differences")]
    ZeroVariance,

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("file format error: {0}")]
    FileFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn ctx_suffix(ctx: &str) -> String {
    if ctx.is_empty() {
        String::new()
    } else {
        format!(" ({ctx})")
    }
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(i) => format!(" at step {i}"),
        None => String::new(),
    }
}

impl Error {
    pub fn dim(expected: impl ToString, got: impl ToString, context: impl ToString) -> Self {
        Error::DimMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
            context: context.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
