use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse label `{value}` (expected 0 or 1)")]
    InvalidLabel { row: usize, value: String },

    #[error("row {row}: unknown category `{value}` for field `{field}`")]
    UnknownCategory {
        row: usize,
        field: String,
        value: String,
    },

    #[error("row {row}: cannot parse numeric value `{value}` for field `{field}`")]
    InvalidNumber {
        row: usize,
        field: String,
        value: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(
        "inverse-HVP estimate diverged after {steps} steps (|h| = {norm:.3e}); \
         increase the damping or decrease the loss scale"
    )]
    LissaDiverged { steps: usize, norm: f64 },

    #[error("labels contain a single class; AUC is undefined")]
    SingleClass,

    #[error("no checkpoint retained for epoch {0}")]
    MissingCheckpoint(usize),

    #[error("row index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Stage { source, .. } => source.kind(),
            Error::Io { .. }
            | Error::Csv(_)
            | Error::MissingColumn(_)
            | Error::InvalidLabel { .. }
            | Error::UnknownCategory { .. }
            | Error::InvalidNumber { .. }
            | Error::Schema(_)
            | Error::Split(_)
            | Error::SingleClass
            | Error::IndexOutOfRange { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::LissaDiverged { .. } => {
                ErrorKind::Numeric
            }
            Error::Shape(_) | Error::InvalidArgument(_) | Error::MissingCheckpoint(_) => {
                ErrorKind::Other
            }
        }
    }
}
