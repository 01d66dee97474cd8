use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("corpus contains no sentences")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step {t} outside schedule range [0, {total}]")]
    StepOutOfRange { t: i64, total: u64 },

    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("negative loss {value} for category {category}")]
    NegativeLoss { category: usize, value: f64 },

    #[error("cannot select {count} positions from {available} maskable")]
    TooManyPositions { count: usize, available: usize },

    #[error("no eligible position has positive weight")]
    ZeroWeights,

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("masked index set is empty")]
    EmptyMask,

    #[error("non-finite loss at step {step} (last metrics: {last})")]
    NonFinite { step: u64, last: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("vocabulary hash mismatch: checkpoint {checkpoint:016x}, corpus {corpus:016x}")]
    VocabMismatch { checkpoint: u64, corpus: u64 },

    #[error("run directory {0} already contains a run (use --force to overwrite)")]
    RunExists(PathBuf),

    #[error("run directory {0} is locked by another process")]
    Locked(PathBuf),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Usage and configuration problems exit with 1, everything else with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::RunExists(_) | Error::Locked(_) => 1,
            _ => 2,
        }
    }
}
