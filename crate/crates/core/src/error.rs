use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("row {row}, column {column}: {message}")]
    MalformedRow {
        row: usize,
        column: String,
        message: String,
    },

    #[error("unknown {field} value {value:?}")]
    UnknownEnumValue { field: &'static str, value: String },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("gaussian mixture fit failed: {0}")]
    Mixture(String),

    #[error("generation refused: {0}")]
    GuardRefused(crate::generator::Refusal),

    #[error("acceptance rate too low: {accepted} of {requested} accepted after {attempts} draws")]
    BudgetExhausted {
        requested: usize,
        accepted: usize,
        attempts: usize,
    },

    #[error("artifact format error: {0}")]
    Artifact(String),

    #[error("checksum mismatch")]
    ChecksumMismatch,

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
