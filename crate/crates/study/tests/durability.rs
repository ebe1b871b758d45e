use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use synth_eval_core::fixtures::study_manifests;
use synth_eval_core::Origin;
use synth_eval_study::event_log::replay_bytes;
use synth_eval_study::{NextItem, StudyService};

/// `(session_id, item_id, answer)` for one acknowledged response, with the
/// log length observed right after the ack.
type AckedAt = ((String, String, Origin), u64);

/// Runs two interleaved raters over a 50-item study and records every ack
/// together with the log size at that moment.
fn recorded_study(dir: &Path) -> (String, Vec<AckedAt>, Vec<u8>) {
    let (svc, _) = StudyService::open(dir).unwrap();
    let (real, synth) = study_manifests(25);
    let study_id = svc.create_study(&real, &synth, 25, 99).unwrap().study_id;
    let log_len = || std::fs::metadata(svc.log_path(&study_id)).unwrap().len();
    let a = svc.open_session(&study_id, "a").unwrap().session_id;
    let b = svc.open_session(&study_id, "b").unwrap().session_id;
    let mut acked = Vec::new();
    for step in 0..100 {
        let (sid, answer) = if step % 2 == 0 {
            (&a, Origin::Real)
        } else {
            (&b, if step % 3 == 0 { Origin::Real } else { Origin::Synthetic })
        };
        let NextItem::Item { item_id, .. } = svc.next_item(sid).unwrap() else {
            panic!()
        };
        let ack = svc.submit_response(sid, &item_id, answer, None).unwrap();
        assert!(ack.recorded);
        acked.push(((sid.clone(), item_id, answer), log_len()));
    }
    svc.close_study(&study_id).unwrap();
    let bytes = std::fs::read(svc.log_path(&study_id)).unwrap();
    (study_id, acked, bytes)
}

/// Responses per session, in session order.
fn by_session(
    responses: impl IntoIterator<Item = (String, String, Origin)>,
) -> BTreeMap<String, Vec<(String, Origin)>> {
    let mut map: BTreeMap<String, Vec<(String, Origin)>> = BTreeMap::new();
    for (sid, item, answer) in responses {
        map.entry(sid).or_default().push((item, answer));
    }
    map
}

fn recovered(bytes: &[u8]) -> BTreeMap<String, Vec<(String, Origin)>> {
    let replay = replay_bytes(bytes, Path::new("prefix")).unwrap();
    let Some(state) = replay.state else {
        return BTreeMap::new();
    };
    by_session(state.sessions.iter().flat_map(|s| {
        s.responses
            .iter()
            .map(move |r| (s.session_id.clone(), r.item_id.clone(), r.answer))
    }))
}

#[test]
fn crash_at_event_boundaries_and_inside_events_keeps_exactly_the_acked_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let (_, acked, bytes) = recorded_study(dir.path());
    let boundaries: Vec<usize> = std::iter::once(0)
        .chain(
            bytes
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == b'\n')
                .map(|(i, _)| i + 1),
        )
        .collect();
    // empty, create, two session-opens, 100 responses, close
    assert_eq!(boundaries.len(), 105);

    let mut cuts: BTreeSet<usize> = BTreeSet::new();
    for w in boundaries.windows(2) {
        cuts.extend([w[0], w[0] + 1, (w[0] + w[1]) / 2, w[1] - 1, w[1]]);
    }
    // every byte of the first two responses and of the close event
    for line in [3, 4, boundaries.len() - 2] {
        cuts.extend(boundaries[line]..=boundaries[line + 1]);
    }

    for &cut in &cuts {
        let prefix = &bytes[..cut];
        let want = by_session(
            acked
                .iter()
                .filter(|(_, len)| *len as usize <= cut)
                .map(|(r, _)| r.clone()),
        );
        let got = recovered(prefix);
        // sessions opened but not yet answered appear with no responses
        let got: BTreeMap<_, _> = got.into_iter().filter(|(_, v)| !v.is_empty()).collect();
        assert_eq!(got, want, "crash after {cut} bytes");
        let replay = replay_bytes(prefix, Path::new("prefix")).unwrap();
        let at_boundary = boundaries.binary_search(&cut).is_ok();
        assert_eq!(replay.recovery.is_none(), at_boundary, "cut {cut}");
        if let Some(rec) = replay.recovery {
            assert_eq!(rec.offset + rec.discarded_bytes, cut as u64);
            assert_eq!(replay.valid_len, rec.offset);
        }
    }
}

#[test]
fn reopening_after_a_torn_write_truncates_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let (real, synth) = study_manifests(25);
    let (study_id, session_id, acked) = {
        let (svc, _) = StudyService::open(dir.path()).unwrap();
        let study_id = svc.create_study(&real, &synth, 25, 4).unwrap().study_id;
        let sid = svc.open_session(&study_id, "r").unwrap().session_id;
        svc.fail_appends_after(&study_id, 10).unwrap();
        let mut acked = 0;
        loop {
            let NextItem::Item { item_id, .. } = svc.next_item(&sid).unwrap() else {
                panic!()
            };
            match svc.submit_response(&sid, &item_id, Origin::Synthetic, None) {
                Ok(_) => acked += 1,
                Err(_) => break,
            }
        }
        // the failed response is not visible in memory either
        assert_eq!(
            svc.snapshot(&study_id).unwrap().session(&sid).unwrap().responses.len(),
            acked
        );
        (study_id, sid, acked)
    };
    assert_eq!(acked, 10);

    let (svc, notes) = StudyService::open(dir.path()).unwrap();
    assert_eq!(notes.len(), 1);
    assert!(notes[0].recovery.discarded_bytes > 0);
    let state = svc.snapshot(&study_id).unwrap();
    assert_eq!(state.session(&session_id).unwrap().responses.len(), 10);
    assert_eq!(
        std::fs::metadata(svc.log_path(&study_id)).unwrap().len(),
        notes[0].recovery.offset
    );

    // the session continues at position 11 and the log stays clean
    let NextItem::Item { item_id, position, .. } = svc.next_item(&session_id).unwrap() else {
        panic!()
    };
    assert_eq!(position, 11);
    svc.submit_response(&session_id, &item_id, Origin::Real, None).unwrap();
    drop(svc);
    let (svc, notes) = StudyService::open(dir.path()).unwrap();
    assert!(notes.is_empty());
    assert_eq!(
        svc.snapshot(&study_id)
            .unwrap()
            .session(&session_id)
            .unwrap()
            .responses
            .len(),
        11
    );
}
