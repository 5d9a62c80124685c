use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence too short: need at least {needed} samples, got {got}")]
    SequenceTooShort { needed: usize, got: usize },

    #[error("need at least 2 segmentation points, got {0}")]
    InsufficientPeaks(usize),

    #[error("cycle has (near) zero standard deviation")]
    DegenerateCycle,

    #[error("no cycles survived preprocessing")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("sparsity bound {t} exceeds number of atoms {k}")]
    SparsityExceedsAtoms { t: usize, k: usize },

    #[error("too few samples: {n} columns for {k} atoms")]
    TooFewSamples { n: usize, k: usize },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("objective became non-finite at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("missing fiducial points: {0}")]
    MissingFiducials(&'static str),

    #[error("no cycles left after excluding incomplete fiducial sets")]
    EmptyAfterExclusion,

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("combinatorial guard: {0} supports exceeds the enumeration limit")]
    CombinatorialGuard(u128),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes in model file")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u16),

    #[error("corrupt entry table: {0}")]
    CorruptEntryTable(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
