//! Seeded balanced-set construction.
//!
//! All draws come from one ChaCha8 stream seeded with the study seed, and
//! every bound is drawn as a `u64` so the sequence does not depend on the
//! platform's pointer width.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use synth_eval_core::{ImageRecord, Manifest, Origin};

use crate::error::StudyError;
use crate::model::StudyItem;

const ORDER_HASH_DOMAIN: &[u8] = b"synth-eval/item-order/v1";

fn draw_below_or_eq(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo as u64..=hi as u64) as usize
}

/// Picks `k` of `0..len` without replacement (partial Fisher-Yates). The
/// result is in draw order.
pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    assert!(k <= len);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..k {
        let j = draw_below_or_eq(rng, i, len - 1);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Fisher-Yates shuffle in place.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, data: &mut [T]) {
    for i in (1..data.len()).rev() {
        let j = draw_below_or_eq(rng, 0, i);
        data.swap(i, j);
    }
}

/// SHA-256 over a fixed little-endian serialization of the presentation
/// order: item count, then per item the truth byte and the length-prefixed
/// source id.
pub fn item_order_hash<'a>(order: impl ExactSizeIterator<Item = (&'a str, Origin)>) -> String {
    let mut h = Sha256::new();
    h.update(ORDER_HASH_DOMAIN);
    h.update((order.len() as u64).to_le_bytes());
    for (source_id, truth) in order {
        h.update([match truth {
            Origin::Real => 0u8,
            Origin::Synthetic => 1u8,
        }]);
        h.update((source_id.len() as u64).to_le_bytes());
        h.update(source_id.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Opaque id for the item at `position`. Carries nothing about the image.
pub fn item_id(study_id: &str, position: usize) -> String {
    let mut h = Sha256::new();
    h.update(study_id.as_bytes());
    h.update([0u8]);
    h.update((position as u64).to_le_bytes());
    hex::encode(&h.finalize()[..10])
}

/// Result of drawing a balanced set: items in presentation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalancedSet {
    pub items: Vec<StudyItem>,
    pub item_order_hash: String,
}

/// Samples `n_per_class` real records from `real` and synthetic records from
/// `synth`, then shuffles the concatenation once. Records whose origin does
/// not match their manifest's role are ignored.
pub fn draw_balanced_set(
    study_id: &str,
    real: &Manifest,
    synth: &Manifest,
    n_per_class: usize,
    seed: u64,
) -> Result<BalancedSet, StudyError> {
    if n_per_class == 0 {
        return Err(StudyError::InvalidRequest("n_per_class must be positive".into()));
    }
    fn eligible(m: &Manifest, origin: Origin, n: usize) -> Result<Vec<&ImageRecord>, StudyError> {
        let recs: Vec<_> = m.records.iter().filter(|r| r.origin == origin).collect();
        if recs.len() < n {
            return Err(StudyError::InsufficientRecords {
                origin,
                available: recs.len(),
                required: n,
            });
        }
        Ok(recs)
    }
    let real_recs = eligible(real, Origin::Real, n_per_class)?;
    let synth_recs = eligible(synth, Origin::Synthetic, n_per_class)?;
    let synth_ids: HashSet<&str> = synth_recs.iter().map(|r| r.id.as_str()).collect();
    if let Some(dup) = real_recs.iter().find(|r| synth_ids.contains(r.id.as_str())) {
        return Err(StudyError::DuplicateItemId(dup.id.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<(String, std::path::PathBuf, Origin)> = Vec::with_capacity(2 * n_per_class);
    for (manifest, recs, origin) in [
        (real, &real_recs, Origin::Real),
        (synth, &synth_recs, Origin::Synthetic),
    ] {
        for i in sample_indices(&mut rng, recs.len(), n_per_class) {
            pool.push((recs[i].id.clone(), manifest.resolve_path(recs[i]), origin));
        }
    }
    shuffle(&mut rng, &mut pool);

    let item_order_hash = item_order_hash(pool.iter().map(|(id, _, o)| (id.as_str(), *o)));
    let items = pool
        .into_iter()
        .enumerate()
        .map(|(pos, (source_id, path, truth))| StudyItem {
            item_id: item_id(study_id, pos),
            source_id,
            path,
            truth,
        })
        .collect();
    Ok(BalancedSet { items, item_order_hash })
}
