//! Count-faithful reference fixtures.
//!
//! Per-image scores and rater answers behind the published evaluation are not
//! available, so these builders synthesize inputs whose aggregate counts
//! reproduce the published ones exactly: frozen-classifier confusion counts,
//! augmentation-comparison AUC/F1 values, and per-rater accuracy breakdowns.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use crate::classifier_eval::PredictionSet;
use crate::feature_store::{save_manifest, ClassLabel, FeatureStoreError, ImageRecord, Manifest, Origin};

fn epoch() -> DateTime<Utc> {
    DateTime::UNIX_EPOCH
}

fn records(prefix: &str, n: usize, class_label: ClassLabel, origin: Origin, source_tag: &str) -> Vec<ImageRecord> {
    (0..n)
        .map(|i| ImageRecord {
            id: format!("{prefix}_{i:04}"),
            path: format!("{prefix}/{prefix}_{i:04}.png"),
            class_label,
            origin,
            source_tag: source_tag.to_string(),
        })
        .collect()
}

/// Frozen-classifier test sets: 1061 real melanomas, 360 real benign, and
/// 1000 synthetic melanomas that replace the real ones in the second set.
pub const REAL_MELANOMA: usize = 1061;
pub const REAL_BENIGN: usize = 360;
pub const SYNTH_MELANOMA: usize = 1000;
/// Melanomas called melanoma at threshold 0.5.
pub const REAL_MELANOMA_DETECTED: usize = 1048;
pub const SYNTH_MELANOMA_DETECTED: usize = 833;

pub struct FrozenClassifierFixture {
    pub real_manifest: Manifest,
    pub synthetic_manifest: Manifest,
    pub real_predictions: PredictionSet,
    pub synthetic_predictions: PredictionSet,
}

/// `n` scores of which the first `above` lie in `[0.5, 1)` and the rest in
/// `(0, 0.5)`.
fn split_scores(n: usize, above: usize) -> Vec<f64> {
    let below = n - above;
    let hi = (0..above).map(move |i| 0.5 + 0.49 * i as f64 / above.max(1) as f64);
    let lo = (0..below).map(move |i| 0.49 * (i + 1) as f64 / (below + 1) as f64);
    hi.chain(lo).collect()
}

fn predictions(model_tag: &str, manifest: &Manifest, scores: &[f64]) -> PredictionSet {
    PredictionSet::from_triples(
        model_tag,
        manifest
            .records
            .iter()
            .zip(scores)
            .map(|(r, &s)| (r.id.clone(), s, r.class_label)),
    )
    .expect("fixture scores are valid")
}

pub fn frozen_classifier() -> FrozenClassifierFixture {
    let benign = records("real_ben", REAL_BENIGN, ClassLabel::Benign, Origin::Real, "isic2018");
    let mut real_records = records(
        "real_mel",
        REAL_MELANOMA,
        ClassLabel::Melanoma,
        Origin::Real,
        "isic2018",
    );
    real_records.extend(benign.clone());
    let mut synth_records = records(
        "syn_mel",
        SYNTH_MELANOMA,
        ClassLabel::Melanoma,
        Origin::Synthetic,
        "stylegan2",
    );
    synth_records.extend(benign);
    let real_manifest = Manifest::new("real-set", epoch(), real_records);
    let synthetic_manifest = Manifest::new("synthetic-set", epoch(), synth_records);

    let benign_scores = split_scores(REAL_BENIGN, 0);
    let mut real_scores = split_scores(REAL_MELANOMA, REAL_MELANOMA_DETECTED);
    real_scores.extend(&benign_scores);
    let mut synth_scores = split_scores(SYNTH_MELANOMA, SYNTH_MELANOMA_DETECTED);
    synth_scores.extend(&benign_scores);

    FrozenClassifierFixture {
        real_predictions: predictions("frozen-efficientnet", &real_manifest, &real_scores),
        synthetic_predictions: predictions("frozen-efficientnet", &synthetic_manifest, &synth_scores),
        real_manifest,
        synthetic_manifest,
    }
}

/// Held-out test set for the augmentation comparison.
pub const TEST_MELANOMA: usize = 40;
pub const TEST_BENIGN: usize = 1960;

/// Target counts for one classifier at threshold 0.5: true positives, false
/// positives, and the Mann-Whitney U (melanoma/benign pairs where the
/// melanoma scores higher).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankTargets {
    pub tp: usize,
    pub fp: usize,
    pub u: usize,
}

/// Real-only classifier: F1 = 54/321 = 0.1682, AUC = 72536/78400 = 0.9252.
pub const REAL_ONLY_TARGETS: RankTargets = RankTargets {
    tp: 27,
    fp: 254,
    u: 72_536,
};
/// Real + synthetic classifier: F1 = 30/116 = 0.2586, AUC = 74049/78400 = 0.9445.
pub const AUGMENTED_TARGETS: RankTargets = RankTargets {
    tp: 15,
    fp: 61,
    u: 74_049,
};

pub fn augmentation_manifest() -> Manifest {
    let mut recs = records("test_mel", TEST_MELANOMA, ClassLabel::Melanoma, Origin::Real, "isic");
    recs.extend(records(
        "test_ben",
        TEST_BENIGN,
        ClassLabel::Benign,
        Origin::Real,
        "isic",
    ));
    Manifest::new("augmentation-test-set", epoch(), recs)
}

/// Scores over `augmentation_manifest()` realizing `targets` exactly at
/// threshold 0.5, with no melanoma/benign ties.
///
/// Benign scores form a ladder: `n_neg - fp` values below 0.5 and `fp` above.
/// Each melanoma is placed between two ladder rungs so that it beats exactly
/// `c` benign images; the counts `c` are distributed to sum to `u`.
pub fn augmentation_scores(targets: RankTargets) -> Vec<f64> {
    let RankTargets { tp, fp, u } = targets;
    let n_neg = TEST_BENIGN;
    let fn_ = TEST_MELANOMA - tp;
    let below = n_neg - fp;

    let mut ladder: Vec<f64> = (0..below).map(|i| 0.5 * (i + 1) as f64 / (below + 1) as f64).collect();
    ladder.extend((0..fp).map(|j| 0.5 + 0.5 * (j + 1) as f64 / (fp + 1) as f64));

    // detected melanomas beat at least every benign below threshold
    let base = tp * below;
    let max = tp * n_neg + fn_ * below;
    assert!(u >= base && u <= max, "U = {u} not realizable in [{base}, {max}]");
    let mut remaining = u - base;
    let mut counts = Vec::with_capacity(TEST_MELANOMA);
    for _ in 0..tp {
        let extra = remaining.min(fp);
        remaining -= extra;
        counts.push(below + extra);
    }
    for _ in 0..fn_ {
        let c = remaining.min(below);
        remaining -= c;
        counts.push(c);
    }
    debug_assert_eq!(remaining, 0);

    let place = |c: usize, detected: bool| -> f64 {
        if detected && c == below {
            0.5
        } else if c == 0 {
            ladder[0] / 2.0
        } else if c == n_neg {
            (ladder[n_neg - 1] + 1.0) / 2.0
        } else if !detected && c == below {
            (ladder[below - 1] + 0.5) / 2.0
        } else {
            (ladder[c - 1] + ladder[c]) / 2.0
        }
    };
    let mut scores: Vec<f64> = counts.iter().enumerate().map(|(i, &c)| place(c, i < tp)).collect();
    scores.extend(ladder);
    scores
}

pub fn augmentation_predictions(model_tag: &str, targets: RankTargets) -> PredictionSet {
    predictions(model_tag, &augmentation_manifest(), &augmentation_scores(targets))
}

/// Per-rater accuracy targets: `(tag, real correct, synthetic correct, machine)`
/// out of 100 real and 100 synthetic items.
pub const RATER_TARGETS: [(&str, usize, usize, bool); 3] = [
    ("Dermatologist 1", 51, 91, false),
    ("Dermatologist 2", 70, 54, false),
    ("Discriminator", 35, 84, true),
];

/// Answers reproducing the given per-class correct counts. The first
/// `real_correct` real items (in presentation order) and the first
/// `synth_correct` synthetic items are answered correctly.
pub fn count_faithful_answers(truths: &[Origin], real_correct: usize, synth_correct: usize) -> Vec<Origin> {
    let mut seen_real = 0;
    let mut seen_synth = 0;
    truths
        .iter()
        .map(|&t| {
            let (seen, quota) = match t {
                Origin::Real => (&mut seen_real, real_correct),
                Origin::Synthetic => (&mut seen_synth, synth_correct),
            };
            let correct = *seen < quota;
            *seen += 1;
            match (t, correct) {
                (t, true) => t,
                (Origin::Real, false) => Origin::Synthetic,
                (Origin::Synthetic, false) => Origin::Real,
            }
        })
        .collect()
}

/// 200-item joint label table: both real 70, A real / B synthetic 40,
/// A synthetic / B real 30, both synthetic 60.
pub fn kappa_joint_table() -> Vec<(Origin, Origin)> {
    use Origin::{Real as R, Synthetic as S};
    let mut pairs = Vec::with_capacity(200);
    pairs.extend(std::iter::repeat_n((R, R), 70));
    pairs.extend(std::iter::repeat_n((R, S), 40));
    pairs.extend(std::iter::repeat_n((S, R), 30));
    pairs.extend(std::iter::repeat_n((S, S), 60));
    pairs
}

/// Real and synthetic manifests for a rating study, `n` images each.
pub fn study_manifests(n: usize) -> (Manifest, Manifest) {
    let real = Manifest::new(
        "study-real",
        epoch(),
        records("real_mel", n, ClassLabel::Melanoma, Origin::Real, "isic2018"),
    );
    let synth = Manifest::new(
        "study-synthetic",
        epoch(),
        records("syn_mel", n, ClassLabel::Melanoma, Origin::Synthetic, "stylegan2"),
    );
    (real, synth)
}

/// A valid 1x1 RGBA PNG used as placeholder image content.
pub const PLACEHOLDER_PNG: [u8; 67] = [
    0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A, 0x00, 0x00, 0x00, 0x0D, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1F, 0x15, 0xC4, 0x89, 0x00, 0x00, 0x00, 0x0A, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9C, 0x63, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0D, 0x0A, 0x2D, 0xB4, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4E, 0x44, 0xAE, 0x42, 0x60, 0x82,
];

/// Writes [`study_manifests`] plus a placeholder PNG for every record under
/// `dir`. Returns the real and synthetic manifest paths.
pub fn write_study_fixture(dir: &Path, n: usize) -> Result<(PathBuf, PathBuf), FeatureStoreError> {
    let (real, synth) = study_manifests(n);
    let mut out = Vec::with_capacity(2);
    for (m, file) in [(&real, "real_manifest.json"), (&synth, "synthetic_manifest.json")] {
        for r in &m.records {
            let path = dir.join(&r.path);
            let io = |source| FeatureStoreError::Io {
                path: path.clone(),
                source,
            };
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            std::fs::write(&path, PLACEHOLDER_PNG).map_err(io)?;
        }
        let path = dir.join(file);
        save_manifest(m, &path)?;
        out.push(path);
    }
    let synth_path = out.pop().expect("two manifests");
    let real_path = out.pop().expect("two manifests");
    Ok((real_path, synth_path))
}
