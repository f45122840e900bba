use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("scatter matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("exhaustive permutation search supports at most 8 classes, got {0}")]
    TooManyClasses(usize),

    #[error("label {label} out of range for {q} classes")]
    LabelOutOfRange { label: usize, q: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("level {alpha} outside the estimated admissible range ({alpha_c}, {alpha_bar})")]
    LevelOutOfRange { alpha: f64, alpha_c: f64, alpha_bar: f64 },

    #[error("model requirement not met: {0}")]
    Unsupported(String),

    #[error("missing column {0:?}")]
    MissingColumn(String),

    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    CsvStream(#[from] csv::Error),

    #[error(transparent)]
    JsonStream(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
