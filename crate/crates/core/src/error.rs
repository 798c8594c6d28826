use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("timestamp regression at record {index}: {t_us} < {prev_us}")]
    TimestampRegression { index: usize, t_us: u64, prev_us: u64 },

    #[error("pose ({x:.3}, {y:.3}) lies outside the {width}x{height} m arena")]
    OutOfArena {
        x: f64,
        y: f64,
        width: f64,
        height: f64,
    },

    #[error("pose log does not cover t={t_us} us (nearest gap {gap_us} us exceeds {tolerance_us} us)")]
    PoseGap {
        t_us: u64,
        gap_us: u64,
        tolerance_us: u64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cosine similarity undefined for an all-zero sequence")]
    ZeroSequence,

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("container: {0}")]
    Container(String),

    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        term: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
