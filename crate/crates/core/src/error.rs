use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimator, simulator and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point transfer is degenerate (homogeneous scale {scale:e})")]
    TransferDegenerate { scale: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("numerical failure at frame {frame}: {reason}")]
    NumericalAtFrame { frame: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing {what}: {}", path.display())]
    MissingFile { what: String, path: PathBuf },

    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
