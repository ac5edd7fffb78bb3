use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frame has {available} keypoints, need more than k = {k}")]
    InsufficientKeypoints { available: usize, k: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("no forward cache for this input")]
    MissingCache,

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    VersionMismatch { expected: String, found: String },

    #[error("count mismatch: {0}")]
    CountMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("no consensus: best model has {inliers} inliers")]
    NoConsensus { inliers: usize },

    #[error("cheirality test is ambiguous (best {best}, runner-up {second}, of {total} points)")]
    CheiralityTie {
        best: usize,
        second: usize,
        total: usize,
    },

    #[error("frame {0} has no ground-truth pose")]
    MissingPose(i64),

    #[error("ground-truth translation is zero")]
    ZeroTranslation,

    #[error("database needs at least 2 entries, got {0}")]
    EmptyDatabase(usize),

    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used for process exit codes and the C status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::Divergence { .. }
            | Error::Degenerate(_)
            | Error::NoConsensus { .. }
            | Error::CheiralityTie { .. }
            | Error::ZeroTranslation => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
