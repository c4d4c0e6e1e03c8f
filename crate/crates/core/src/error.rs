use std::path::PathBuf;

use crate::SampleId;

/// Errors raised anywhere in the acquisition engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid has no visible voxels")]
    EmptyGrid,

    #[error("class count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),

    #[error("row is not a probability vector (sum={sum})")]
    InvalidRow { sum: f64 },

    #[error("row {row} is not normalized (sum={sum})")]
    RowNotNormalized { row: usize, sum: f64 },

    #[error("intra-set diversity requested against an empty selection")]
    EmptySelection,

    #[error("budget {budget} exceeds pool of {pool} candidates")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("budget must be at least 1")]
    ZeroBudget,

    #[error("no summary for sample {0}")]
    MissingSummary(SampleId),

    #[error("no features for sample {0}")]
    MissingFeatures(SampleId),

    #[error("cannot build an index over an empty pool")]
    EmptyPool,

    #[error("index is empty")]
    EmptyIndex,

    #[error("sample {0} is already indexed")]
    DuplicateId(SampleId),

    #[error("snapshot digest {found} does not match indexed content {expected}")]
    StaleSnapshot { expected: String, found: String },

    #[error("bad magic bytes in grid file")]
    BadMagic,

    #[error("unsupported grid format version {0}")]
    VersionUnsupported(u16),

    #[error("grid payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("grid file has {0} trailing bytes after the payload")]
    TrailingData(u64),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corrupt cycle state: {0}")]
    StateCorrupt(String),

    #[error("invalid pool spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
