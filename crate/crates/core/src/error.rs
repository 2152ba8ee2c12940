use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. Messages carry the module that raised
/// them so the CLI can surface them without extra context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("encoder: empty vocabulary")]
    EmptyVocabulary,

    #[error("encoder: unknown identifier {0:?}")]
    UnknownIdentifier(String),

    #[error("data: {0}")]
    InvalidData(String),

    #[error("io: {path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error("ingest: malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("ingest: schema error: missing required column {column:?}")]
    MissingColumn { column: String },

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("lexicon: {0}")]
    Lexicon(String),

    #[error("sampling: insufficient negative space ({0})")]
    InsufficientNegativeSpace(String),

    #[error("sampling: no symptoms for any subject")]
    NoSymptoms,

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("neuralnet: shape mismatch: {0}")]
    Shape(String),

    #[error("{what}: index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("training: non-finite loss at epoch {epoch}, batch {batch}; try lowering the learning rate (currently {learning_rate:e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        learning_rate: f64,
    },

    #[error("metrics: AUC undefined: scores contain only one class")]
    AucUndefined,

    #[error("metrics: {0}")]
    Metric(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model file: unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    /// True for failures caused by numerics rather than input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
