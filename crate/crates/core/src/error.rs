use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at row {row}: {msg}")]
    Format { row: usize, msg: String },

    #[error("data error for id {id:?}: {msg}")]
    Data { id: String, msg: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("kernel matrix is singular even with maximum jitter (condition estimate {condition_estimate:.3e})")]
    SingularKernel { condition_estimate: f64 },

    #[error("training failed: {0}")]
    Training(String),

    #[error("candidate pool exhausted")]
    Exhausted,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("pool has no objective labels")]
    Unlabeled,

    #[error("unknown candidate id {0:?}")]
    UnknownId(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("session log: {0}")]
    Log(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
