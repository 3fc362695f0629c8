use thiserror::Error;

use crate::schema::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid language: {0}")]
    InvalidLanguage(ValidationReport),

    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),

    #[error("unknown object `{0}`")]
    UnknownObject(String),

    #[error("unknown type `{0}`")]
    UnknownType(String),

    #[error("duplicate object `{0}`")]
    DuplicateObject(String),

    #[error("type mismatch in {fact}: argument {position} is `{found}`, expected `{expected}`")]
    TypeMismatch {
        fact: String,
        position: usize,
        expected: String,
        found: String,
    },

    #[error("arity mismatch for `{predicate}`: expected {expected} arguments, got {found}")]
    ArityMismatch {
        predicate: String,
        expected: usize,
        found: usize,
    },

    #[error("boolean fact {0} must have value 1.0")]
    BooleanValue(String),

    #[error("graphs in a batch were built from different languages")]
    MixedLanguage,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("softmax input has every entry masked")]
    AllMasked,

    #[error("segment index {index} out of range for {num_segments} segments")]
    BadSegmentIndex { index: usize, num_segments: usize },

    #[error("backward requires a scalar loss, got shape {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("state admits no legal action")]
    NoLegalAction,

    #[error("expert label {action} at sample {index} is not legal in its state")]
    LabelNotLegal { index: usize, action: String },

    #[error("illegal action `{0}`")]
    IllegalAction(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed document: {0}")]
    Format(String),

    #[error("env lane {lane}: {source}")]
    Lane {
        lane: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for the numeric failures that abort training.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFiniteGrad(_) | Error::NonFiniteLoss(_) => true,
            Error::Lane { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
