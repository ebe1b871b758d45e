//! Append-only, line-delimited study event log.
//!
//! Each line is `<UTC timestamp>|<event type>|<JSON payload>\n`. An append
//! is acknowledged only after the bytes are synced to disk, so a crash can
//! at worst leave one partial line at the end of the file. Replay keeps the
//! valid prefix and reports where the damaged tail starts; damage anywhere
//! else is an error.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};

use crate::error::LogError;
use crate::model::{CreatePayload, Event, EventBody, ImportPayload, ResponsePayload, SessionOpenPayload, StudyState};

pub fn encode_event(event: &Event) -> String {
    let payload = match &event.body {
        EventBody::Create(p) => serde_json::to_string(p),
        EventBody::SessionOpen(p) => serde_json::to_string(p),
        EventBody::Response(p) => serde_json::to_string(p),
        EventBody::Import(p) => serde_json::to_string(p),
        EventBody::Close => Ok("{}".to_string()),
    }
    .expect("event payloads serialize");
    format!(
        "{}|{}|{}\n",
        event.ts.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        event.body.kind(),
        payload
    )
}

pub fn decode_event(line: &str) -> Result<Event, String> {
    let mut parts = line.splitn(3, '|');
    let (Some(ts), Some(kind), Some(payload)) = (parts.next(), parts.next(), parts.next()) else {
        return Err("expected `timestamp|type|payload`".into());
    };
    let ts = DateTime::parse_from_rfc3339(ts)
        .map_err(|e| format!("bad timestamp {ts:?}: {e}"))?
        .with_timezone(&Utc);
    fn parse<T: serde::de::DeserializeOwned>(kind: &str, payload: &str) -> Result<T, String> {
        serde_json::from_str(payload).map_err(|e| format!("bad {kind} payload: {e}"))
    }
    let body = match kind {
        "create" => EventBody::Create(parse::<CreatePayload>(kind, payload)?),
        "session-open" => EventBody::SessionOpen(parse::<SessionOpenPayload>(kind, payload)?),
        "response" => EventBody::Response(parse::<ResponsePayload>(kind, payload)?),
        "import" => EventBody::Import(parse::<ImportPayload>(kind, payload)?),
        "close" => {
            parse::<serde_json::Map<String, serde_json::Value>>(kind, payload)?;
            EventBody::Close
        }
        other => return Err(format!("unknown event type {other:?}")),
    };
    Ok(Event { ts, body })
}

/// Single writer for one study's log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    len: u64,
    fail_after: Option<usize>,
    poisoned: bool,
}

impl EventLog {
    /// Creates a new, empty log. Fails if the file exists.
    pub fn create(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(|source| {
                if source.kind() == std::io::ErrorKind::AlreadyExists {
                    LogError::Exists { path: path.clone() }
                } else {
                    LogError::Io {
                        path: path.clone(),
                        source,
                    }
                }
            })?;
        sync_parent(&path)?;
        Ok(EventLog {
            path,
            file,
            len: 0,
            fail_after: None,
            poisoned: false,
        })
    }

    /// Opens an existing log for appending, cutting it to `valid_len` first
    /// so a damaged tail is not extended.
    pub fn open(path: impl AsRef<Path>, valid_len: u64) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new().write(true).open(&path).map_err(io)?;
        if file.metadata().map_err(io)?.len() != valid_len {
            file.set_len(valid_len).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        file.seek(SeekFrom::Start(valid_len)).map_err(io)?;
        Ok(EventLog {
            path,
            file,
            len: valid_len,
            fail_after: None,
            poisoned: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Test hook: after `appends` more successful appends, the next append
    /// writes half its line and fails, as if the process died mid-write.
    /// Every later append fails too.
    pub fn fail_after(&mut self, appends: usize) {
        self.fail_after = Some(appends);
    }

    /// Appends one event and syncs it. Returns the byte offset of the line.
    pub fn append(&mut self, event: &Event) -> Result<u64, LogError> {
        if self.poisoned {
            return Err(LogError::Injected {
                path: self.path.clone(),
            });
        }
        let line = encode_event(event);
        if let Some(left) = self.fail_after.as_mut() {
            if *left == 0 {
                self.poisoned = true;
                let half = &line.as_bytes()[..line.len() / 2];
                let _ = self.file.write_all(half).and_then(|_| self.file.sync_data());
                return Err(LogError::Injected {
                    path: self.path.clone(),
                });
            }
            *left -= 1;
        }
        let offset = self.len;
        let written = self.file.write_all(line.as_bytes()).and_then(|_| self.file.sync_data());
        if let Err(source) = written {
            // drop whatever part of the line reached the file
            let _ = self.file.set_len(offset);
            let _ = self.file.seek(SeekFrom::Start(offset));
            return Err(LogError::Io {
                path: self.path.clone(),
                source,
            });
        }
        self.len += line.len() as u64;
        Ok(offset)
    }
}

fn sync_parent(path: &Path) -> Result<(), LogError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        File::open(dir)
            .and_then(|d| d.sync_all())
            .map_err(|source| LogError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
    }
    Ok(())
}

/// Where a damaged tail began and how much of it was dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovery {
    pub offset: u64,
    pub discarded_bytes: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    /// `None` for an empty log.
    pub state: Option<StudyState>,
    pub events: usize,
    /// Length of the valid prefix in bytes.
    pub valid_len: u64,
    pub recovery: Option<Recovery>,
}

pub fn replay_log(path: impl AsRef<Path>) -> Result<Replay, LogError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    replay_bytes(&bytes, path)
}

/// Replays log contents. `path` is used only in error messages.
pub fn replay_bytes(bytes: &[u8], path: &Path) -> Result<Replay, LogError> {
    let mut state: Option<StudyState> = None;
    let mut offset = 0usize;
    let mut events = 0usize;
    while offset < bytes.len() {
        let tail = |reason: String| Recovery {
            offset: offset as u64,
            discarded_bytes: (bytes.len() - offset) as u64,
            reason,
        };
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Ok(Replay {
                state,
                events,
                valid_len: offset as u64,
                recovery: Some(tail("event line has no terminator".into())),
            });
        };
        let end = offset + nl;
        let is_last = end + 1 == bytes.len();
        let decoded = std::str::from_utf8(&bytes[offset..end])
            .map_err(|e| format!("invalid UTF-8: {e}"))
            .and_then(decode_event);
        let event = match decoded {
            Ok(event) => event,
            Err(reason) if is_last => {
                return Ok(Replay {
                    state,
                    events,
                    valid_len: offset as u64,
                    recovery: Some(tail(reason)),
                })
            }
            Err(reason) => {
                return Err(LogError::Corrupt {
                    path: path.to_path_buf(),
                    offset: offset as u64,
                    reason,
                })
            }
        };
        let inconsistent = |reason: String| LogError::Inconsistent {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason,
        };
        match (&mut state, event.body) {
            (None, EventBody::Create(p)) => {
                state = Some(StudyState::from_create(event.ts, p).map_err(|e| inconsistent(e.to_string()))?);
            }
            (None, body) => return Err(inconsistent(format!("{} event before create", body.kind()))),
            (Some(st), body) => st
                .apply(&Event { ts: event.ts, body })
                .map_err(|e| inconsistent(e.to_string()))?,
        }
        events += 1;
        offset = end + 1;
    }
    Ok(Replay {
        state,
        events,
        valid_len: offset as u64,
        recovery: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use synth_eval_core::Origin;

    fn ts(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(secs, 123_456_789).unwrap()
    }

    fn sample_events() -> Vec<Event> {
        let items = (0..2)
            .map(|i| crate::model::StudyItem {
                item_id: format!("it{i}"),
                source_id: format!("src{i}"),
                path: format!("img|{i}.png").into(),
                truth: if i == 0 { Origin::Real } else { Origin::Synthetic },
            })
            .collect();
        vec![
            Event {
                ts: ts(1),
                body: EventBody::Create(CreatePayload {
                    study_id: "st".into(),
                    n_real: 1,
                    n_synth: 1,
                    seed: 9,
                    item_order_hash: "h".into(),
                    items,
                }),
            },
            Event {
                ts: ts(2),
                body: EventBody::SessionOpen(SessionOpenPayload {
                    session_id: "se".into(),
                    rater_tag: "a|b".into(),
                }),
            },
            Event {
                ts: ts(3),
                body: EventBody::Response(ResponsePayload {
                    session_id: "se".into(),
                    item_id: "it0".into(),
                    answer: Origin::Synthetic,
                    position: 1,
                    elapsed_ms: Some(1500),
                }),
            },
            Event {
                ts: ts(4),
                body: EventBody::Close,
            },
        ]
    }

    #[test]
    fn lines_round_trip_with_pipes_in_payload() {
        for e in sample_events() {
            let line = encode_event(&e);
            assert!(line.ends_with('\n') && line.matches('\n').count() == 1);
            assert_eq!(decode_event(line.trim_end_matches('\n')).unwrap(), e);
        }
    }

    #[test]
    fn empty_log_is_empty_state() {
        let r = replay_bytes(b"", Path::new("x")).unwrap();
        assert_eq!((r.state, r.events, r.valid_len, r.recovery), (None, 0, 0, None));
    }

    #[test]
    fn torn_tail_is_recovered() {
        let text: String = sample_events().iter().map(encode_event).collect();
        let full = replay_bytes(text.as_bytes(), Path::new("x")).unwrap();
        assert_eq!(full.events, 4);
        let cut = text.len() - 5;
        let r = replay_bytes(&text.as_bytes()[..cut], Path::new("x")).unwrap();
        assert_eq!(r.events, 3);
        let rec = r.recovery.unwrap();
        assert_eq!(rec.offset, r.valid_len);
        assert_eq!(rec.offset + rec.discarded_bytes, cut as u64);
    }

    #[test]
    fn mid_log_damage_is_an_error() {
        let mut text: String = sample_events().iter().map(encode_event).collect();
        let second = text.find('\n').unwrap() + 1;
        text.replace_range(second..second + 4, "XXXX");
        let err = replay_bytes(text.as_bytes(), Path::new("x")).unwrap_err();
        assert!(matches!(err, LogError::Corrupt { offset, .. } if offset == second as u64));
    }

    #[test]
    fn events_before_create_are_rejected() {
        let text = encode_event(&sample_events()[3]);
        assert!(matches!(
            replay_bytes(text.as_bytes(), Path::new("x")).unwrap_err(),
            LogError::Inconsistent { offset: 0, .. }
        ));
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.log");
        let events = sample_events();
        let mut log = EventLog::create(&path).unwrap();
        assert!(matches!(EventLog::create(&path).unwrap_err(), LogError::Exists { .. }));
        for e in &events[..2] {
            log.append(e).unwrap();
        }
        log.fail_after(0);
        assert!(log.append(&events[2]).is_err());
        assert!(log.append(&events[3]).is_err());
        drop(log);
        let r = replay_log(&path).unwrap();
        assert_eq!(r.events, 2);
        assert!(r.recovery.is_some());
        let mut log = EventLog::open(&path, r.valid_len).unwrap();
        log.append(&events[2]).unwrap();
        let r = replay_log(&path).unwrap();
        assert_eq!((r.events, r.recovery), (3, None));
    }
}
