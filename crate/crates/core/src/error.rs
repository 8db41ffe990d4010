use thiserror::Error;

/// Errors produced by sketches, samplers and the calibration machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected element: {0}")]
    RejectedElement(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rejected update: {0}")]
    RejectedUpdate(String),

    #[error("cannot merge sketches: {0}")]
    Merge(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("degenerate threshold: tau = {0}")]
    DegenerateThreshold(f64),

    #[error("statistic cannot be evaluated: {0}")]
    Evaluation(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
