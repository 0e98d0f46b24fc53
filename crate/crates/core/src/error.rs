use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("malformed n-best line {line}")]
    MalformedNBest { line: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty prefix/source")]
    EmptyPrefixOrSource,
    #[error("non-finite score from {scorer} scorer")]
    NonFinite { scorer: &'static str },
    #[error("oracle bounds: {0}")]
    OracleBounds(String),
    #[error("missing feature `{0}`")]
    MissingFeature(String),
    #[error("missing source for sentence {0}")]
    MissingSource(usize),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("remote scorer error: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
