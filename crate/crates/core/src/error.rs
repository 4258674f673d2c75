use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("validation failure: {0}")]
    ValidationFailure(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("covariate `{0}` has a degenerate range (lower == upper)")]
    DegenerateRange(String),

    #[error("split too small: {0}")]
    TooSmall(String),

    #[error("unknown dataset `{name}` (registry has: {})", valid.join(", "))]
    UnknownDataset { name: String, valid: Vec<String> },

    #[error("dataset has no events")]
    NoEvents,

    #[error("information matrix is singular or rank deficient")]
    SingularInformation,

    #[error("linear predictor overflow ({0:e})")]
    NumericOverflow(f64),

    #[error("fit did not converge")]
    NotConverged,

    #[error("no comparable pairs for concordance")]
    NoComparablePairs,

    #[error("standard error must be positive and finite, got {0}")]
    InvalidSe(f64),

    #[error("level {level} is outside 0..{k}")]
    InvalidLevel { level: usize, k: usize },

    #[error("no baseline-significant variables")]
    NoSignificantBaseline,

    #[error("incomplete grid, missing: {}", .0.join("; "))]
    IncompleteGrid(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
