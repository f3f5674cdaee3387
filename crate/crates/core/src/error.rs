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

    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("filter eliminated all data")]
    FilterEliminatedAll,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{kind} id {id} out of range (n = {n})")]
    IdOutOfRange { kind: &'static str, id: usize, n: usize },

    #[error(
        "conformity exponent {exponent:.1} exceeds 700; use a larger tau or rescale timestamps"
    )]
    IndexOverflow { exponent: f64 },

    #[error("inference mode {0} needs a conformity index")]
    MissingIndex(&'static str),

    #[error("user {0} has interacted with every item; no negative can be sampled")]
    NoNegative(usize),

    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("degenerate synthetic config: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
