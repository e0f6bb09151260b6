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

    /// Malformed input. `line` is 1-based and only set for line-oriented formats.
    #[error("{location}: {message}")]
    Parse { location: Location, message: String },

    #[error("invalid value: {0}")]
    Invariant(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("record {record_id}: unresolved object id {object_id} in scene {scene_id}")]
    UnresolvedObject {
        record_id: String,
        scene_id: String,
        object_id: u32,
    },

    #[error("missing scene {0}")]
    MissingScene(String),

    #[error("prediction for unknown record {0}")]
    UnknownRecord(String),

    #[error("optimizer diverged at step {step}: loss {loss} exceeds 10x initial {initial}")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("{0}")]
    Backend(#[from] BackendError),
}

/// Source position attached to parse errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}", p.display()),
            (Some(p), None) => write!(f, "{}", p.display()),
            (None, Some(l)) => write!(f, "line {l}"),
            (None, None) => write!(f, "<input>"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: Option<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: Location { path, line },
            message: message.into(),
        }
    }

    /// Line number of a JSON Lines parse failure, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Parse { location, .. } => location.line,
            _ => None,
        }
    }
}

/// Failure of a grounding or reasoning backend, tagged with the chain step
/// that issued the call.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{step}: transport error: {message}")]
    Transport { step: String, message: String },
    #[error("{step}: backend returned HTTP {status}")]
    Status { step: String, status: u16 },
    #[error("{step}: malformed response: {message}")]
    Malformed { step: String, message: String },
    #[error("{step}: {message}")]
    Other { step: String, message: String },
}

impl BackendError {
    pub fn step(&self) -> &str {
        match self {
            BackendError::Transport { step, .. }
            | BackendError::Status { step, .. }
            | BackendError::Malformed { step, .. }
            | BackendError::Other { step, .. } => step,
        }
    }

    /// Re-tag the error with the chain step it surfaced in.
    pub fn at_step(self, new_step: &str) -> Self {
        let s = new_step.to_string();
        match self {
            BackendError::Transport { message, .. } => BackendError::Transport { step: s, message },
            BackendError::Status { status, .. } => BackendError::Status { step: s, status },
            BackendError::Malformed { message, .. } => BackendError::Malformed { step: s, message },
            BackendError::Other { message, .. } => BackendError::Other { step: s, message },
        }
    }
}
