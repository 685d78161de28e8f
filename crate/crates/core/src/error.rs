use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("no interactions in {0}")]
    NoInteractions(PathBuf),

    #[error("{path}:{line}: item {raw} has no metadata entry")]
    MissingMetadata {
        path: PathBuf,
        line: usize,
        raw: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("{kind} id {id} out of bounds (len {len})")]
    OutOfBounds {
        kind: &'static str,
        id: usize,
        len: usize,
    },

    #[error("non-finite loss {0}; lower the learning rate")]
    Divergence(f64),

    #[error("bad embedding file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("content text is empty")]
    EmptyText,

    #[error("text contains no alphanumeric tokens")]
    NoTokens,

    #[error("no precomputed vector for item {0}")]
    UnknownKey(u32),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("unparseable oracle answer: {0:?}")]
    UnparseableAnswer(String),

    #[error("all {0} oracle calls failed")]
    OracleExhausted(usize),

    #[error("simulated users cover every user; no negative can be sampled")]
    NoNegativeUsers,

    #[error("no simulation result for cold item {0}")]
    MissingSimulation(u32),

    #[error("no eligible users for the {0} task")]
    NoEligibleUsers(&'static str),

    #[error("decision log is empty")]
    EmptyDecisionLog,

    #[error("no positive interactions to sample from")]
    NoPositives,

    #[error("variant {variant} needs {component}")]
    VariantMismatch {
        variant: String,
        component: &'static str,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input (files, arguments, configuration)
    /// rather than by a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Malformed { .. }
                | Error::NoInteractions(_)
                | Error::MissingMetadata { .. }
                | Error::InvalidArgument(_)
                | Error::DimMismatch { .. }
                | Error::OutOfBounds { .. }
                | Error::Format { .. }
                | Error::EmptyText
                | Error::NoTokens
                | Error::VariantMismatch { .. }
                | Error::Json(_)
        )
    }
}
