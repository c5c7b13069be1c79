use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding norm {norm:e} is at or below the zero tolerance")]
    ZeroNorm { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("embedding contains a non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("empty embedding")]
    EmptyEmbedding,

    #[error("tuning set is empty")]
    EmptyTuningSet,

    #[error("hub is degenerate: mean direction has norm {norm:e}")]
    DegenerateHub { norm: f64 },

    #[error("numeric optimisation diverged after {step} steps")]
    NonFinite { step: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token sequence is empty")]
    EmptySequence,

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("unknown token {token:?} in {text:?}")]
    Tokenization { token: String, text: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0} is empty")]
    EmptyFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("remote encoder protocol error: {0}")]
    Protocol(String),

    #[error("remote encoder reported: {0}")]
    Remote(String),

    #[error("remote encoder timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("encoder transport error: {0}")]
    Transport(#[from] std::io::Error),

    #[error("beam size must be at least 1, got {0}")]
    InvalidBeamSize(usize),

    #[error("worker failed twice on shard {shard:?} at position {position}: {message}")]
    WorkerFailure {
        shard: std::ops::Range<usize>,
        position: usize,
        message: String,
    },

    #[error("search exceeded {limit} iterations without converging")]
    TimeoutAbort { limit: usize },

    #[error("missing ranking for query {0}")]
    MissingRanking(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
