use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot parse {text:?}: {reason}")]
    Parse { text: String, reason: String },
    #[error("number {0} is neither a problem quantity nor a known constant")]
    UnboundNumber(String),
    #[error("expression leaf {0} has no binding")]
    UnboundLeaf(String),
    #[error("unknown dataset dialect {0:?}")]
    UnknownDialect(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("premise sequence is empty")]
    EmptyPremise,
    #[error("token {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("problem {0} has no question span")]
    MissingQuestion(String),
    #[error("candidate cap exceeded at depth {depth}: {count} > {cap}")]
    CandidateCap { depth: usize, count: usize, cap: usize },
    #[error("problem has no initial thoughts")]
    NoThoughts,
    #[error("gold expression needs depth {required} but the limit is {limit}")]
    UnreachableGold { required: usize, limit: usize },
    #[error("non-finite loss on problem {0}")]
    NonFiniteLoss(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(text: &str, reason: impl Into<String>) -> Self {
        Error::Parse { text: text.to_string(), reason: reason.into() }
    }

    /// True for failures caused by numerics rather than input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
