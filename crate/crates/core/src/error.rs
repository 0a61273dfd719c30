use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("checkpoint format error at byte {offset}: {detail}")]
    CheckpointFormat { offset: usize, detail: String },

    #[error("record format error at byte {offset}: {detail}")]
    RecordFormat { offset: usize, detail: String },

    #[error("cannot parse label `{name}`: bad {field} ({detail})")]
    LabelParse {
        name: String,
        field: &'static str,
        detail: String,
    },

    #[error("image codec error for {path}: {detail}")]
    Codec { path: PathBuf, detail: String },

    #[error("record was produced by a different model (fingerprint mismatch)")]
    WrongModel,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
