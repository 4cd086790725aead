use thiserror::Error;

#[derive(Debug, Error)]
pub enum AcnsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:e}, target {target:e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("non-positive density {value} at cell ({i}, {j})")]
    NonPositiveDensity { i: usize, j: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient history: need {needed} states, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid initial condition: {0}")]
    InitialCondition(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AcnsError>;
