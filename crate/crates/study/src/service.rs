//! In-process study service.
//!
//! Each study owns one log writer behind a mutex and one state behind a
//! read-write lock. A write takes the writer lock, validates against the
//! current state, appends and syncs, and only then applies the event and
//! returns. Reads only take the state lock, so sessions never wait on one
//! another except while an append is in flight.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use synth_eval_core::{Manifest, Origin, ReportBundle};

use crate::error::StudyError;
use crate::event_log::{replay_log, EventLog, Recovery};
use crate::model::{
    CreatePayload, Event, EventBody, ImportPayload, ImportedAnswer, ResponsePayload, SessionOpenPayload, StudyState,
    StudyStatus,
};
use crate::report::study_report;
use crate::sampling::draw_balanced_set;

const LOG_EXTENSION: &str = "log";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyCreated {
    pub study_id: String,
    pub total: usize,
    pub item_order_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionOpened {
    pub session_id: String,
    pub total: usize,
}

/// What a rater is shown next. Deliberately has no field that could carry
/// truth, origin, or source information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextItem {
    Item {
        item_id: String,
        image_url: String,
        position: usize,
        total: usize,
    },
    Done {
        done: bool,
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub recorded: bool,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Imported {
    pub session_id: String,
    pub recorded: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemRef {
    pub item_id: String,
    pub image_url: String,
}

/// A damaged tail dropped while loading a study log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadNote {
    pub path: PathBuf,
    pub recovery: Recovery,
}

pub fn image_url(item_id: &str) -> String {
    format!("/items/{item_id}/image")
}

struct StudyHandle {
    state: RwLock<StudyState>,
    log: Mutex<EventLog>,
}

#[derive(Default)]
struct Registry {
    studies: HashMap<String, Arc<StudyHandle>>,
    sessions: HashMap<String, String>,
    items: HashMap<String, (String, usize)>,
}

impl Registry {
    fn insert(&mut self, handle: Arc<StudyHandle>) {
        let state = handle.state.read();
        let study_id = state.study.study_id.clone();
        for (pos, item) in state.study.items.iter().enumerate() {
            self.items.insert(item.item_id.clone(), (study_id.clone(), pos));
        }
        for s in &state.sessions {
            self.sessions.insert(s.session_id.clone(), study_id.clone());
        }
        drop(state);
        self.studies.insert(study_id, handle);
    }
}

pub struct StudyService {
    data_dir: PathBuf,
    registry: RwLock<Registry>,
}

impl StudyService {
    /// Opens (or initializes) a data directory and replays every study log
    /// in it. Damaged tails are cut off and reported.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<(Self, Vec<LoadNote>), StudyError> {
        let data_dir = data_dir.as_ref().to_path_buf();
        let studies_dir = data_dir.join("studies");
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StudyError::Io { path, source }
        };
        std::fs::create_dir_all(&studies_dir).map_err(io(&studies_dir))?;
        let mut logs: Vec<PathBuf> = std::fs::read_dir(&studies_dir)
            .map_err(io(&studies_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == LOG_EXTENSION))
            .collect();
        logs.sort();

        let mut registry = Registry::default();
        let mut notes = Vec::new();
        for path in logs {
            let replay = replay_log(&path)?;
            if let Some(recovery) = replay.recovery.clone() {
                log::warn!(
                    "{}: dropped {} bytes of damaged tail at offset {} ({})",
                    path.display(),
                    recovery.discarded_bytes,
                    recovery.offset,
                    recovery.reason
                );
                notes.push(LoadNote {
                    path: path.clone(),
                    recovery,
                });
            }
            let log = EventLog::open(&path, replay.valid_len)?;
            let Some(state) = replay.state else {
                log::warn!("{}: no complete create event; ignoring", path.display());
                continue;
            };
            registry.insert(Arc::new(StudyHandle {
                state: RwLock::new(state),
                log: Mutex::new(log),
            }));
        }
        Ok((
            StudyService {
                data_dir,
                registry: RwLock::new(registry),
            },
            notes,
        ))
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn log_path(&self, study_id: &str) -> PathBuf {
        self.data_dir
            .join("studies")
            .join(format!("{study_id}.{LOG_EXTENSION}"))
    }

    fn study(&self, study_id: &str) -> Result<Arc<StudyHandle>, StudyError> {
        self.registry
            .read()
            .studies
            .get(study_id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownStudy(study_id.to_string()))
    }

    fn study_of_session(&self, session_id: &str) -> Result<Arc<StudyHandle>, StudyError> {
        let reg = self.registry.read();
        reg.sessions
            .get(session_id)
            .and_then(|study_id| reg.studies.get(study_id))
            .cloned()
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))
    }

    /// Builds an event from the current state, validates it, appends it
    /// durably, then applies it. The writer lock is held throughout so no
    /// other write can interleave.
    fn commit_with<F>(handle: &StudyHandle, build: F) -> Result<EventBody, StudyError>
    where
        F: FnOnce(&StudyState) -> Result<EventBody, StudyError>,
    {
        let mut log = handle.log.lock();
        let body = {
            let state = handle.state.read();
            let body = build(&state)?;
            state.validate(&body)?;
            body
        };
        let event = Event { ts: Utc::now(), body };
        log.append(&event)?;
        handle
            .state
            .write()
            .apply(&event)
            .expect("event validated under the writer lock");
        Ok(event.body)
    }

    fn commit(handle: &StudyHandle, body: EventBody) -> Result<(), StudyError> {
        Self::commit_with(handle, |_| Ok(body)).map(|_| ())
    }

    pub fn create_study(
        &self,
        real: &Manifest,
        synth: &Manifest,
        n_per_class: usize,
        seed: u64,
    ) -> Result<StudyCreated, StudyError> {
        let study_id = uuid::Uuid::new_v4().simple().to_string();
        let set = draw_balanced_set(&study_id, real, synth, n_per_class, seed)?;
        let event = Event {
            ts: Utc::now(),
            body: EventBody::Create(CreatePayload {
                study_id: study_id.clone(),
                n_real: n_per_class,
                n_synth: n_per_class,
                seed,
                item_order_hash: set.item_order_hash.clone(),
                items: set.items,
            }),
        };
        let mut log = EventLog::create(self.log_path(&study_id))?;
        log.append(&event)?;
        let EventBody::Create(payload) = event.body else {
            unreachable!()
        };
        let state = StudyState::from_create(event.ts, payload)?;
        let total = state.study.total();
        self.registry.write().insert(Arc::new(StudyHandle {
            state: RwLock::new(state),
            log: Mutex::new(log),
        }));
        Ok(StudyCreated {
            study_id,
            total,
            item_order_hash: set.item_order_hash,
        })
    }

    pub fn open_session(&self, study_id: &str, rater_tag: &str) -> Result<SessionOpened, StudyError> {
        let handle = self.study(study_id)?;
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        Self::commit(
            &handle,
            EventBody::SessionOpen(SessionOpenPayload {
                session_id: session_id.clone(),
                rater_tag: rater_tag.to_string(),
            }),
        )?;
        self.registry
            .write()
            .sessions
            .insert(session_id.clone(), study_id.to_string());
        let total = handle.state.read().study.total();
        Ok(SessionOpened { session_id, total })
    }

    pub fn next_item(&self, session_id: &str) -> Result<NextItem, StudyError> {
        let handle = self.study_of_session(session_id)?;
        let state = handle.state.read();
        if state.study.status == StudyStatus::Closed {
            return Err(StudyError::Closed(state.study.study_id.clone()));
        }
        let session = state
            .session(session_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))?;
        let total = state.study.total();
        Ok(match state.study.items.get(session.cursor()) {
            Some(item) => NextItem::Item {
                item_id: item.item_id.clone(),
                image_url: image_url(&item.item_id),
                position: session.cursor() + 1,
                total,
            },
            None => NextItem::Done { done: true, total },
        })
    }

    pub fn submit_response(
        &self,
        session_id: &str,
        item_id: &str,
        answer: Origin,
        elapsed_ms: Option<u64>,
    ) -> Result<Ack, StudyError> {
        let handle = self.study_of_session(session_id)?;
        let body = Self::commit_with(&handle, |state| {
            let session = state
                .session(session_id)
                .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))?;
            Ok(EventBody::Response(ResponsePayload {
                session_id: session_id.to_string(),
                item_id: item_id.to_string(),
                answer,
                position: session.cursor() + 1,
                elapsed_ms,
            }))
        })?;
        let EventBody::Response(p) = body else { unreachable!() };
        Ok(Ack {
            recorded: true,
            position: p.position,
        })
    }

    /// Closes the study. Closing twice is a no-op.
    pub fn close_study(&self, study_id: &str) -> Result<(), StudyError> {
        let handle = self.study(study_id)?;
        if handle.state.read().study.status == StudyStatus::Closed {
            return Ok(());
        }
        match Self::commit(&handle, EventBody::Close) {
            Err(StudyError::Closed(_)) => Ok(()),
            other => other,
        }
    }

    /// Records a machine-baseline session. `responses` may be in any order
    /// but must cover every item exactly once.
    pub fn import_session(
        &self,
        study_id: &str,
        rater_tag: &str,
        responses: &[(String, Origin)],
    ) -> Result<Imported, StudyError> {
        let handle = self.study(study_id)?;
        let ordered = {
            let state = handle.state.read();
            let mut by_pos: Vec<Option<Origin>> = vec![None; state.study.total()];
            for (item_id, answer) in responses {
                let pos = state
                    .study
                    .position_of(item_id)
                    .ok_or_else(|| StudyError::InvalidImport(format!("item {item_id} is not in this study")))?;
                if by_pos[pos].replace(*answer).is_some() {
                    return Err(StudyError::InvalidImport(format!("item {item_id} answered twice")));
                }
            }
            let missing = by_pos.iter().filter(|a| a.is_none()).count();
            if missing > 0 {
                return Err(StudyError::InvalidImport(format!("{missing} items have no answer")));
            }
            state
                .study
                .items
                .iter()
                .zip(by_pos)
                .map(|(item, a)| ImportedAnswer {
                    item_id: item.item_id.clone(),
                    answer: a.expect("checked above"),
                })
                .collect::<Vec<_>>()
        };
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let recorded = ordered.len();
        Self::commit(
            &handle,
            EventBody::Import(ImportPayload {
                session_id: session_id.clone(),
                rater_tag: rater_tag.to_string(),
                responses: ordered,
            }),
        )?;
        self.registry
            .write()
            .sessions
            .insert(session_id.clone(), study_id.to_string());
        Ok(Imported { session_id, recorded })
    }

    /// Item ids and image URLs in presentation order, for running a machine
    /// baseline. Nothing about origin is included.
    pub fn study_items(&self, study_id: &str) -> Result<Vec<ItemRef>, StudyError> {
        let handle = self.study(study_id)?;
        let state = handle.state.read();
        Ok(state
            .study
            .items
            .iter()
            .map(|i| ItemRef {
                item_id: i.item_id.clone(),
                image_url: image_url(&i.item_id),
            })
            .collect())
    }

    /// Report for a closed study.
    pub fn report(&self, study_id: &str) -> Result<ReportBundle, StudyError> {
        let handle = self.study(study_id)?;
        let state = handle.state.read();
        if state.study.status == StudyStatus::Open {
            return Err(StudyError::StillOpen(study_id.to_string()));
        }
        study_report(&state, synth_eval_core::report_timestamp())
    }

    /// Image bytes and a content type sniffed from the file signature.
    pub fn item_image(&self, item_id: &str) -> Result<(Vec<u8>, &'static str), StudyError> {
        let (study_id, pos) = self
            .registry
            .read()
            .items
            .get(item_id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownItem(item_id.to_string()))?;
        let path = self.study(&study_id)?.state.read().study.items[pos].path.clone();
        let bytes = std::fs::read(&path).map_err(|source| StudyError::Io { path, source })?;
        let ct = sniff_content_type(&bytes);
        Ok((bytes, ct))
    }

    /// Snapshot of a study's full state, including truths. Not served over
    /// the rater API.
    pub fn snapshot(&self, study_id: &str) -> Result<StudyState, StudyError> {
        Ok(self.study(study_id)?.state.read().clone())
    }

    pub fn study_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.registry.read().studies.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Test hook forwarding to [`EventLog::fail_after`].
    #[doc(hidden)]
    pub fn fail_appends_after(&self, study_id: &str, appends: usize) -> Result<(), StudyError> {
        self.study(study_id)?.log.lock().fail_after(appends);
        Ok(())
    }
}

pub fn sniff_content_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A, ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        [b'B', b'M', ..] => "image/bmp",
        [b'I', b'I', 0x2A, 0x00, ..] | [b'M', b'M', 0x00, 0x2A, ..] => "image/tiff",
        _ => "application/octet-stream",
    }
}
