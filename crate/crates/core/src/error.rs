use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected phrase: nothing typeable left in {0:?}")]
    RejectedPhrase(String),

    #[error("too few users: found {found} distinct users, need at least {needed}")]
    TooFewUsers { found: usize, needed: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("record {record}: {reason}")]
    Validation { record: usize, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index {index} out of range for {op} (extent {extent})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("symbol {0:?} has no key on the keyboard")]
    NoKey(char),

    #[error("input length {len} outside 1..={window}")]
    InputLength { len: usize, window: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("symbols missing from training data: {0}")]
    MissingSymbols(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("tensor {name}: {detail}")]
    TensorMismatch { name: String, detail: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("non-finite gradient for {param} at epoch {epoch}, batch {batch}")]
    NonFiniteGradient {
        param: String,
        epoch: usize,
        batch: usize,
    },

    #[error("evaluation: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
