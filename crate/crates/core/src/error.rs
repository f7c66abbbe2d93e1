use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the checkpoint store, analysis passes and the toy LM.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: not a WTS1 container: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("tensor '{0}': empty shape")]
    EmptyShape(String),

    #[error("tensor '{name}': value count {got} does not match shape product {want}")]
    ValueCountMismatch { name: String, got: usize, want: usize },

    #[error("no checkpoints in {0}")]
    NoCheckpoints(PathBuf),

    #[error("duplicate step {0}")]
    DuplicateStep(u64),

    #[error("{path}: header step {header} disagrees with filename step {filename}")]
    StepMismatch { path: PathBuf, header: u64, filename: u64 },

    #[error("tensor '{name}' has inconsistent shape/dtype across checkpoints (step {step})")]
    InconsistentTensor { name: String, step: u64 },

    #[error("unknown tensor '{0}'")]
    UnknownTensor(String),

    #[error("need K >= 2 parameters, got {0}")]
    TooFewParameters(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("msd curve and density movie have mismatched step vectors")]
    MismatchedSteps,

    #[error("ternary quantization needs 1 or 2 modes, histogram has {0}")]
    TooManyModes(usize),

    #[error("tensor '{name}' is not a matrix (shape {shape:?})")]
    NotMatrix { name: String, shape: Vec<usize> },

    #[error("probe batch must have B >= 2, got {0}")]
    BatchTooSmall(usize),

    #[error("token id {id} out of range for vocabulary {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("sequence length {len} exceeds context window {n_ctx}")]
    SequenceTooLong { len: usize, n_ctx: usize },

    #[error("need >= 2 tokens, got {0}")]
    NeedTwoTokens(usize),

    #[error("corpus too short: {got} bytes, need at least {want}")]
    CorpusTooShort { got: usize, want: usize },

    #[error("no evaluation sentences")]
    NoSentences,

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
