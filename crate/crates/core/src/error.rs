use thiserror::Error;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed record at line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },

    #[error("household {id} is incomplete: missing category {missing}")]
    IncompleteHousehold { id: u64, missing: String },

    #[error("channel {channel} has fewer than 2 observed values and cannot be interpolated")]
    UnrecoverableChannel { channel: &'static str },

    #[error("insufficient data: need at least {required} steps, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("insufficient cycles: decomposition needs n >= 2*period ({} steps), got {n}", 2 * period)]
    InsufficientCycles { n: usize, period: usize },

    #[error("patch length {patch_len} exceeds sequence length {n}")]
    PatchTooLong { patch_len: usize, n: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("normalization scale gamma is zero for channel {channel}; cannot invert")]
    NonInvertibleScale { channel: usize },

    #[error("zero-norm vector under cosine similarity")]
    ZeroNorm,

    #[error("prompt length {len} exceeds backbone context length {max_positions}")]
    ContextLength { len: usize, max_positions: usize },

    #[error("checkpoint load failed: {0}")]
    Checkpoint(String),

    #[error("training diverged (non-finite loss) at step {step}")]
    Divergence { step: usize },

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("prototype selection is empty")]
    DegenerateSelection,

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Checkpoint(_) => ErrorKind::Config,
            Error::Io(_)
            | Error::Csv(_)
            | Error::MalformedRecord { .. }
            | Error::IncompleteHousehold { .. }
            | Error::UnrecoverableChannel { .. }
            | Error::InsufficientData { .. }
            | Error::EmptyEvaluation => ErrorKind::Data,
            _ => ErrorKind::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
