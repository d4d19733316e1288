use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch in layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value in {what} (row {row}, column {col})")]
    NonFinite { what: String, row: usize, col: usize },

    #[error("backward requires a train-mode forward cache")]
    EvalCache,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown task id {0}")]
    UnknownTask(u32),

    #[error("task id {0} is already committed")]
    DuplicateTask(u32),

    #[error("inconsistent masks: {0}")]
    InconsistentMask(String),

    #[error("FLOP target {target} is infeasible (minimum achievable {minimum})")]
    InfeasibleFlops { target: u64, minimum: u64 },

    #[error("all layers have zero FLOPs")]
    ZeroFlops,

    #[error("dataset for task {0} is empty")]
    EmptyDataset(u32),

    #[error("requested {requested} samples but only {available} are available")]
    NotEnoughSamples { requested: usize, available: usize },

    #[error("expected {expected} magic 0x{want:08x}, found 0x{found:08x} in {path}")]
    BadIdxMagic {
        expected: &'static str,
        want: u32,
        found: u32,
        path: PathBuf,
    },

    #[error("truncated IDX payload in {path}: need {need} bytes, have {have}")]
    TruncatedIdx {
        path: PathBuf,
        need: usize,
        have: usize,
    },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("bad magic: not a checkpoint file")]
    BadMagic,

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("section `{name}` length mismatch: header says {expected} bytes, found {found}")]
    SectionLength {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("budget violated: {0}")]
    ConstraintViolated(String),

    #[error("{0}")]
    MissingData(String),

    #[error("optimizer diverged: {0}")]
    Diverged(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by missing or malformed input data files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::BadIdxMagic { .. }
                | Error::TruncatedIdx { .. }
                | Error::CountMismatch { .. }
                | Error::Io { .. }
                | Error::MissingData(_)
                | Error::BadMagic
                | Error::UnsupportedVersion(_)
                | Error::SectionLength { .. }
                | Error::CorruptCheckpoint(_)
        )
    }
}
