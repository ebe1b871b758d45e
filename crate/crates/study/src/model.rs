//! Study state and the events that drive it.
//!
//! Every mutation of a study goes through [`StudyState::apply`], both when
//! the service handles a request and when a log is replayed, so the two
//! paths cannot drift apart.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use synth_eval_core::Origin;

use crate::error::StudyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyStatus {
    Open,
    Closed,
}

/// Human raters answer through the API; machine sessions are imported whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    Human,
    Machine,
}

/// One presented image. Only `item_id` ever leaves the service while the
/// study is open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub item_id: String,
    pub source_id: String,
    pub path: PathBuf,
    pub truth: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Study {
    pub study_id: String,
    pub items: Vec<StudyItem>,
    pub n_real: usize,
    pub n_synth: usize,
    pub seed: u64,
    pub created_at: DateTime<Utc>,
    pub status: StudyStatus,
    pub item_order_hash: String,
}

impl Study {
    pub fn total(&self) -> usize {
        self.items.len()
    }

    pub fn truths(&self) -> Vec<Origin> {
        self.items.iter().map(|i| i.truth).collect()
    }

    pub fn position_of(&self, item_id: &str) -> Option<usize> {
        self.items.iter().position(|i| i.item_id == item_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterResponse {
    pub item_id: String,
    pub answer: Origin,
    pub answered_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterSession {
    pub session_id: String,
    pub study_id: String,
    pub rater_tag: String,
    pub kind: SessionKind,
    pub opened_at: DateTime<Utc>,
    pub responses: Vec<RaterResponse>,
}

impl RaterSession {
    /// Index of the next unanswered item.
    pub fn cursor(&self) -> usize {
        self.responses.len()
    }

    pub fn answers(&self) -> Vec<Origin> {
        self.responses.iter().map(|r| r.answer).collect()
    }
}

/// Payload of the `create` event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreatePayload {
    pub study_id: String,
    pub n_real: usize,
    pub n_synth: usize,
    pub seed: u64,
    pub item_order_hash: String,
    pub items: Vec<StudyItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOpenPayload {
    pub session_id: String,
    pub rater_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePayload {
    pub session_id: String,
    pub item_id: String,
    pub answer: Origin,
    /// 1-based position of the answered item.
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportedAnswer {
    pub item_id: String,
    pub answer: Origin,
}

/// A machine-baseline session recorded in one event, answers in item order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportPayload {
    pub session_id: String,
    pub rater_tag: String,
    pub responses: Vec<ImportedAnswer>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventBody {
    Create(CreatePayload),
    SessionOpen(SessionOpenPayload),
    Response(ResponsePayload),
    Import(ImportPayload),
    Close,
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Create(_) => "create",
            EventBody::SessionOpen(_) => "session-open",
            EventBody::Response(_) => "response",
            EventBody::Import(_) => "import",
            EventBody::Close => "close",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub ts: DateTime<Utc>,
    pub body: EventBody,
}

/// Full state of one study, reconstructible from its event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyState {
    pub study: Study,
    pub sessions: Vec<RaterSession>,
}

impl StudyState {
    /// Builds the initial state from a `create` event.
    pub fn from_create(ts: DateTime<Utc>, p: CreatePayload) -> Result<Self, StudyError> {
        let n_real = p.items.iter().filter(|i| i.truth == Origin::Real).count();
        if p.items.len() != p.n_real + p.n_synth || n_real != p.n_real || p.items.is_empty() {
            return Err(StudyError::Inconsistent(format!(
                "create event lists {} items ({} real) for n_real={} n_synth={}",
                p.items.len(),
                n_real,
                p.n_real,
                p.n_synth
            )));
        }
        Ok(StudyState {
            study: Study {
                study_id: p.study_id,
                items: p.items,
                n_real: p.n_real,
                n_synth: p.n_synth,
                seed: p.seed,
                created_at: ts,
                status: StudyStatus::Open,
                item_order_hash: p.item_order_hash,
            },
            sessions: Vec::new(),
        })
    }

    pub fn session(&self, session_id: &str) -> Option<&RaterSession> {
        self.sessions.iter().find(|s| s.session_id == session_id)
    }

    fn session_index(&self, session_id: &str) -> Result<usize, StudyError> {
        self.sessions
            .iter()
            .position(|s| s.session_id == session_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))
    }

    pub fn completed_sessions(&self) -> impl Iterator<Item = &RaterSession> {
        let total = self.study.total();
        self.sessions.iter().filter(move |s| s.cursor() == total)
    }

    fn require_open(&self) -> Result<(), StudyError> {
        match self.study.status {
            StudyStatus::Open => Ok(()),
            StudyStatus::Closed => Err(StudyError::Closed(self.study.study_id.clone())),
        }
    }

    fn check_new_session(&self, session_id: &str, rater_tag: &str) -> Result<(), StudyError> {
        if rater_tag.trim().is_empty() {
            return Err(StudyError::InvalidRequest("rater_tag must not be empty".into()));
        }
        if self.session(session_id).is_some() {
            return Err(StudyError::Inconsistent(format!("session {session_id} opened twice")));
        }
        Ok(())
    }

    /// Checks that `body` is a legal next event without changing anything.
    pub fn validate(&self, body: &EventBody) -> Result<(), StudyError> {
        match body {
            EventBody::Create(_) => Err(StudyError::Inconsistent("second create event".into())),
            EventBody::SessionOpen(p) => {
                self.require_open()?;
                self.check_new_session(&p.session_id, &p.rater_tag)
            }
            EventBody::Response(p) => {
                self.require_open()?;
                let session = &self.sessions[self.session_index(&p.session_id)?];
                if session.kind == SessionKind::Machine {
                    return Err(StudyError::InvalidRequest("machine sessions are imported whole".into()));
                }
                if let Some(done) = session.responses.iter().position(|r| r.item_id == p.item_id) {
                    return Err(StudyError::DuplicateResponse {
                        item_id: p.item_id.clone(),
                        position: done + 1,
                    });
                }
                let cursor = session.cursor();
                let Some(expected) = self.study.items.get(cursor) else {
                    return Err(StudyError::SessionComplete(p.session_id.clone()));
                };
                if expected.item_id != p.item_id {
                    return Err(StudyError::OutOfOrder {
                        expected_position: cursor + 1,
                        item_id: p.item_id.clone(),
                    });
                }
                if p.position != cursor + 1 {
                    return Err(StudyError::Inconsistent(format!(
                        "response records position {} but cursor is at {}",
                        p.position,
                        cursor + 1
                    )));
                }
                Ok(())
            }
            EventBody::Import(p) => {
                self.check_new_session(&p.session_id, &p.rater_tag)?;
                if p.responses.len() != self.study.total() {
                    return Err(StudyError::InvalidImport(format!(
                        "{} responses for a {}-item study",
                        p.responses.len(),
                        self.study.total()
                    )));
                }
                for (pos, (item, answer)) in self.study.items.iter().zip(&p.responses).enumerate() {
                    if item.item_id != answer.item_id {
                        return Err(StudyError::InvalidImport(format!(
                            "response {} is for item {} but position {} holds {}",
                            pos + 1,
                            answer.item_id,
                            pos + 1,
                            item.item_id
                        )));
                    }
                }
                Ok(())
            }
            EventBody::Close => self.require_open(),
        }
    }

    /// Validates and applies one event.
    pub fn apply(&mut self, event: &Event) -> Result<(), StudyError> {
        self.validate(&event.body)?;
        match &event.body {
            EventBody::Create(_) => unreachable!("rejected by validate"),
            EventBody::SessionOpen(p) => self.sessions.push(RaterSession {
                session_id: p.session_id.clone(),
                study_id: self.study.study_id.clone(),
                rater_tag: p.rater_tag.clone(),
                kind: SessionKind::Human,
                opened_at: event.ts,
                responses: Vec::new(),
            }),
            EventBody::Response(p) => {
                let idx = self.session_index(&p.session_id)?;
                self.sessions[idx].responses.push(RaterResponse {
                    item_id: p.item_id.clone(),
                    answer: p.answer,
                    answered_at: event.ts,
                    elapsed_ms: p.elapsed_ms,
                });
            }
            EventBody::Import(p) => self.sessions.push(RaterSession {
                session_id: p.session_id.clone(),
                study_id: self.study.study_id.clone(),
                rater_tag: p.rater_tag.clone(),
                kind: SessionKind::Machine,
                opened_at: event.ts,
                responses: p
                    .responses
                    .iter()
                    .map(|r| RaterResponse {
                        item_id: r.item_id.clone(),
                        answer: r.answer,
                        answered_at: event.ts,
                        elapsed_ms: None,
                    })
                    .collect(),
            }),
            EventBody::Close => self.study.status = StudyStatus::Closed,
        }
        Ok(())
    }
}
