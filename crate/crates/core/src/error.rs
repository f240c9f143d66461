use std::path::PathBuf;

/// Errors produced anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("unsupported language pair {src} -> {tgt}")]
    UnsupportedPair { src: String, tgt: String },

    #[error("search space of {candidates} candidates exceeds the limit of {limit}")]
    SearchTooLarge { candidates: u128, limit: u128 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("remote embedder error: {0}")]
    Remote(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
