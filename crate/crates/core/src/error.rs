use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("insufficient history: need {needed} steps, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("cell has no calibration data")]
    MissingCell,
    #[error("calibration table has no usable cells")]
    EmptyTable,
    #[error("no historical profile for node {node}, slot {slot}")]
    MissingSlot { node: usize, slot: usize },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("refusing to overwrite existing file {}", .0.display())]
    WouldOverwrite(PathBuf),
    #[error("unsupported format tag {found:?}, expected {expected:?}")]
    Format { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Divergence,
    MissingArtifact,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::WouldOverwrite(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::InsufficientData(_)
            | Error::InsufficientHistory { .. }
            | Error::DegenerateSplit(_)
            | Error::Csv(_)
            | Error::Format { .. } => ErrorClass::Data,
            Error::Divergence { .. } => ErrorClass::Divergence,
            Error::MissingArtifact(_) => ErrorClass::MissingArtifact,
            _ => ErrorClass::Other,
        }
    }
}
