use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("shape mismatch in layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("input has {got} features but the network expects {expected}")]
    FeatureCount { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("group {group} is frozen but its column is nonzero")]
    FrozenNonzero { group: usize },

    #[error("negative prox threshold {0}")]
    NegativeThreshold(f64),

    #[error("gamma must be positive, got {0}")]
    InvalidGamma(f64),

    #[error("parameter magnitude exceeded {cap} at epoch {epoch}")]
    Divergence { epoch: usize, cap: f64 },

    #[error("non-finite objective at epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate split: {train} train rows, {test} test rows")]
    DegenerateSplit { train: usize, test: usize },

    #[error("grid search failed: {0}")]
    Selection(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: column `{column}` not found")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}: {detail}")]
    Parse {
        path: PathBuf,
        row: usize,
        detail: String,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
