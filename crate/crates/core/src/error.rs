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

    #[error("insufficient data: requested {requested}, available {available}")]
    InsufficientData { requested: usize, available: usize },

    #[error("dangling continuation: subword sequence ends without an end-of-word marker")]
    DanglingContinuation,

    #[error("no anchors: the two vocabularies share no tokens")]
    NoAnchors,

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty reference sentence at index {0}")]
    EmptyReference(usize),

    #[error("sequence of length {len} exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    InvalidConfig(Vec<ConfigIssue>),

    #[error("non-finite loss at step {step} (batch {batch_hash})")]
    NonFinite { step: usize, batch_hash: String },

    #[error("{what} hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// One problem found while validating a config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.reason)
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. } => 3,
            Error::Format { .. }
            | Error::InsufficientData { .. }
            | Error::DanglingContinuation
            | Error::NoAnchors
            | Error::EmptyVocabulary
            | Error::DimensionMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::EmptyReference(_)
            | Error::SequenceTooLong { .. } => 4,
            Error::NonFinite { .. } => 5,
            Error::HashMismatch { .. } => 6,
            Error::Locked(_) => 7,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
