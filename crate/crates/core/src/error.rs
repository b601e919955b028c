use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum DpklError {
    #[error("matrix of size {n} is not positive definite even with jitter {max_jitter:e}")]
    NotPositiveDefinite { n: usize, max_jitter: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("operation requires {expected} kernel mode")]
    ModeMismatch { expected: &'static str },

    #[error("the unlabeled set is empty")]
    EmptyUnlabeledSet,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient rows: requested {requested}, available {available}")]
    InsufficientRows { requested: usize, available: usize },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("target column `{0}` not found")]
    MissingTarget(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DpklError {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            DpklError::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            DpklError::DimensionMismatch { .. } => "DimensionMismatch",
            DpklError::ModeMismatch { .. } => "ModeMismatch",
            DpklError::EmptyUnlabeledSet => "EmptyUnlabeledSet",
            DpklError::InsufficientData(_) => "InsufficientData",
            DpklError::InsufficientRows { .. } => "InsufficientRows",
            DpklError::Parse { .. } => "ParseError",
            DpklError::MissingTarget(_) => "MissingTarget",
            DpklError::Config(_) => "ConfigError",
            DpklError::Schema(_) => "SchemaError",
            DpklError::Internal(_) => "InternalError",
            DpklError::Io(_) => "IoError",
            DpklError::Json(_) => "JsonError",
            DpklError::Csv(_) => "CsvError",
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        DpklError::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}

pub type Result<T> = std::result::Result<T, DpklError>;
