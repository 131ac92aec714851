use thiserror::Error;

/// Errors produced by the planning stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("discontinuous transition chain at transition {0}")]
    Discontinuous(usize),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("replay buffer is empty")]
    EmptyLog,

    #[error("negative edge cost {0}")]
    NegativeCost(f64),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("band infeasible: {0}")]
    InfeasibleBand(String),

    #[error("insufficient data: have {have} steps, need {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
