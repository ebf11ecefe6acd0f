use std::path::PathBuf;

/// Errors produced by the core pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// An operation was called with inputs that violate its contract.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A value failed domain validation (bad delimiters, empty field, ...).
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Engine(#[from] crate::engines::EngineError),

    #[error(transparent)]
    Scorer(#[from] crate::scoring::ScorerError),

    /// Dataset emission refused because some records do not decode back.
    #[error("transcript round-trip failed for {} record(s): {}", .0.len(), .0.join(", "))]
    RoundTrip(Vec<String>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
