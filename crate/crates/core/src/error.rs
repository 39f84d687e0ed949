use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cannot split {n} samples: {reason}")]
    SplitInfeasible { n: usize, reason: String },

    #[error("class index {index} out of range for {count} classes")]
    ClassIndex { index: usize, count: usize },

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid model class: {0}")]
    InvalidClass(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("degenerate slope window: {0}")]
    DegenerateWindow(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
