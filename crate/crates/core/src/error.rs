use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("forgetting factor {0} outside [0, 1]")]
    InvalidLambda(f64),

    #[error("split fraction {0} outside [0, 1]")]
    InvalidFraction(f64),

    #[error("incompatible leaf statistics: {0}")]
    ModelMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} observations to initialise, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("point {0} is not in the active pool")]
    UnknownPoint(u32),

    #[error("active pool is empty")]
    EmptyPool,

    #[error("move is inconsistent with the tree: {0}")]
    InvalidMove(String),

    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
