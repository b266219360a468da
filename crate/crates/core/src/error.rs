use thiserror::Error;

/// Errors raised by the toolkit's library operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),

    #[error("missing annotation: {0}")]
    MissingAnnotation(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("question too long: segment needs {needed} positions but only {available} are available")]
    QuestionTooLong { needed: usize, available: usize },

    #[error("invalid span: {0}")]
    InvalidSpan(String),

    #[error("token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },

    #[error("degenerate mask: no valid positions")]
    DegenerateMask,

    #[error("label error: {0}")]
    Label(String),

    #[error("non-finite value at node {node} ({op}): {detail}")]
    Numeric {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("no candidate spans")]
    NoCandidate,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
