use std::io;

/// Errors produced by the pipeline stages.
///
/// Variants map onto two CLI exit classes: everything here is a data or
/// contract error (exit code 2); usage errors are handled by the CLI layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("no register table for architecture {0}")]
    MissingRegisterTable(String),

    #[error("register table: {0}")]
    RegisterTable(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("encoded length {got} does not match model input length {expected}")]
    InputLength { expected: usize, got: usize },

    #[error("label {label} has {have} examples, sampler needs {need}")]
    TooFewExamples { label: String, have: usize, need: usize },

    #[error("batch contract violated: {0}")]
    Batch(String),

    #[error("non-finite {what} at batch {batch}")]
    NonFinite { what: &'static str, batch: usize },

    #[error("corpus too small: need {required} labels, have {available}")]
    CorpusTooSmall { required: usize, available: usize },

    #[error("holdout architecture {0} is present in the training corpus")]
    Contamination(String),

    #[error("holdout architecture {0} has no functions in the evaluation corpus")]
    EmptyHoldout(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("{0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
