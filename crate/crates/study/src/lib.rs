//! Blinded real-vs-synthetic rating studies.
//!
//! A study is a seeded, balanced, shuffled set of real and synthetic
//! images. Raters step through it over HTTP and see only opaque item ids;
//! every state change is an fsync'd line in the study's event log, and the
//! log alone is enough to rebuild the state after a crash.

pub mod error;
pub mod event_log;
pub mod http;
pub mod model;
pub mod report;
pub mod sampling;
pub mod service;

pub use error::{LogError, StudyError};
pub use event_log::{replay_log, Recovery, Replay};
pub use model::{RaterResponse, RaterSession, SessionKind, Study, StudyItem, StudyState, StudyStatus};
pub use report::study_report;
pub use sampling::draw_balanced_set;
pub use service::{Ack, Imported, ItemRef, NextItem, SessionOpened, StudyCreated, StudyService};
