use thiserror::Error;

pub type Result<T> = std::result::Result<T, HptError>;

#[derive(Debug, Error)]
pub enum HptError {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("language model backend: {0}")]
    Backend(String),

    #[error("could not parse language model response ({message}); raw text: {raw:?}")]
    ResponseParse { message: String, raw: String },

    #[error("corpus structure: {0}")]
    Structural(String),

    #[error("class {0:?} missing from corpus")]
    MissingClass(String),

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: non-finite loss or gradient")]
    Divergence { step: usize, trace: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
