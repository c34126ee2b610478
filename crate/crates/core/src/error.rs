use thiserror::Error;

/// Errors raised by the measure, simulation, solver and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite evaluation: {0}")]
    Evaluation(String),

    #[error("state explosion at step {step}, path {path}: |X| = {magnitude:e}")]
    Explosion { step: usize, path: usize, magnitude: f64 },

    #[error("rank-deficient regression ({context}): condition number {condition:.3e} over {samples} samples")]
    RankDeficient {
        context: String,
        condition: f64,
        samples: usize,
    },

    #[error("tridiagonal breakdown at row {row}: pivot {pivot:e}")]
    Tridiagonal { row: usize, pivot: f64 },

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
