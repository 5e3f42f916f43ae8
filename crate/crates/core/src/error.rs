use std::path::PathBuf;

use crate::failpoint::FailPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to load hash store {path}: {reason}")]
    HashStoreLoad { path: PathBuf, reason: String },

    #[error("corrupt log {path} at byte offset {offset}: {reason}")]
    Corrupt {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("conflict: ({doc_id}, {position}) already has a live record")]
    Conflict { doc_id: String, position: u64 },

    #[error("tier divergence: no live record {chunk_id} at ({doc_id}, {position})")]
    Divergence {
        doc_id: String,
        position: u64,
        chunk_id: String,
    },

    #[error("transaction rejected: {0}")]
    Rejected(String),

    #[error("embedding failed{}: {message}", if *.retryable { " (retryable)" } else { "" })]
    Embedding { retryable: bool, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("timestamp {given} for document {doc_id} does not exceed previous version at {previous}")]
    TimestampRegression {
        doc_id: String,
        previous: i64,
        given: i64,
    },

    #[error("version {requested} out of range (latest is {latest})")]
    VersionOutOfRange { requested: u64, latest: u64 },

    #[error("hot tier apply failed for wal entry {wal_id}: {source}")]
    HotApply {
        wal_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{0} unreconciled transaction(s) outstanding; hot tier is not accepting writes")]
    Unreconciled(usize),

    #[error("store opened read-only")]
    ReadOnly,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("injected fault at {0}")]
    InjectedFault(FailPoint),

    #[error("injected crash at {0}")]
    InjectedCrash(FailPoint),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for simulated process death; the store instance must be dropped and reopened.
    pub fn is_crash(&self) -> bool {
        match self {
            Error::InjectedCrash(_) => true,
            Error::HotApply { source, .. } => source.is_crash(),
            _ => false,
        }
    }
}
