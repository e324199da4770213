use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("embedding table is empty")]
    EmptyEmbeddings,
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("enumeration space of {size} outcomes exceeds cap {cap}; use Monte Carlo estimation")]
    SpaceTooLarge { size: u128, cap: u128 },
    #[error("missing document `{0}`")]
    MissingDocument(String),
    #[error("model statistics not initialized: {0}")]
    Uninitialized(String),
    #[error("non-finite loss at epoch {epoch}, step {step} (f+ = {pos}, f- = {neg})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        pos: f64,
        neg: f64,
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
