use std::path::PathBuf;

use synth_eval_core::{FeatureStoreError, Origin, StatsError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("{origin} manifest has {available} eligible records, {required} required")]
    InsufficientRecords {
        origin: Origin,
        available: usize,
        required: usize,
    },
    #[error("item id {0} appears in both source manifests")]
    DuplicateItemId(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("study {0} is closed")]
    Closed(String),
    #[error("study {0} is still open; reports are available after close")]
    StillOpen(String),
    #[error("item {item_id} was already answered at position {position}")]
    DuplicateResponse { item_id: String, position: usize },
    #[error("item {item_id} is out of sequence; the session is at position {expected_position}")]
    OutOfOrder { expected_position: usize, item_id: String },
    #[error("session {0} has answered every item")]
    SessionComplete(String),
    #[error("invalid import: {0}")]
    InvalidImport(String),
    #[error("study {0} has no completed sessions")]
    NoCompletedSessions(String),
    #[error("inconsistent event: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Manifest(#[from] FeatureStoreError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StudyError {
    /// Stable machine-readable kind, used in API error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            StudyError::UnknownStudy(_) => "unknown_study",
            StudyError::UnknownSession(_) => "unknown_session",
            StudyError::UnknownItem(_) => "unknown_item",
            StudyError::InsufficientRecords { .. } => "insufficient_records",
            StudyError::DuplicateItemId(_) => "duplicate_item_id",
            StudyError::InvalidRequest(_) => "invalid_request",
            StudyError::Closed(_) => "study_closed",
            StudyError::StillOpen(_) => "study_open",
            StudyError::DuplicateResponse { .. } => "duplicate_response",
            StudyError::OutOfOrder { .. } => "out_of_order",
            StudyError::SessionComplete(_) => "session_complete",
            StudyError::InvalidImport(_) => "invalid_import",
            StudyError::NoCompletedSessions(_) => "no_completed_sessions",
            StudyError::Inconsistent(_) => "inconsistent_event",
            StudyError::Log(_) => "log_error",
            StudyError::Manifest(_) => "manifest_error",
            StudyError::Stats(_) => "stats_error",
            StudyError::Io { .. } => "io_error",
        }
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Damage before the final line cannot come from an interrupted append.
    #[error("{path}: corrupt event at byte {offset}: {reason}")]
    Corrupt { path: PathBuf, offset: u64, reason: String },
    #[error("{path}: event at byte {offset} does not follow from the log: {reason}")]
    Inconsistent { path: PathBuf, offset: u64, reason: String },
    #[error("{path}: log already exists")]
    Exists { path: PathBuf },
    #[error("{path}: injected append failure")]
    Injected { path: PathBuf },
}
