//! Downstream classifier evaluation from externally produced prediction
//! files: confusion counts, tie-aware rank AUC, and two-model comparison.
//!
//! The positive class is always melanoma.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::{ClassLabel, Manifest};
use crate::report::{Cell, ReportBundle, Table};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub const ACCURACY_CAVEAT: &str =
    "Accuracy mostly reflects the larger benign class; prefer AUC when the test set is imbalanced.";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("{path}: I/O error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("row {row}: id {id:?} is not in the manifest")]
    UnknownId { row: usize, id: String },
    #[error("row {row}: id {id:?} appears more than once")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: score {score} for id {id:?} is outside [0, 1]")]
    ScoreOutOfRange { row: usize, id: String, score: f64 },
    #[error("{0} manifest ids have no prediction (first: {1:?})")]
    MissingIds(usize, String),
    #[error("no predictions overlap the manifest")]
    Empty,
    #[error("threshold {0} is outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("AUC needs both classes: {positives} melanoma and {negatives} benign")]
    SingleClass { positives: usize, negatives: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub score: f64,
}

/// On-disk prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub model_tag: String,
    pub rows: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub truths: Vec<ClassLabel>,
    pub model_tag: String,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Builds a set directly from `(id, score, truth)` triples, enforcing the
    /// uniqueness and range invariants.
    pub fn from_triples(
        model_tag: impl Into<String>,
        triples: impl IntoIterator<Item = (String, f64, ClassLabel)>,
    ) -> Result<Self, ClassifierError> {
        let mut set = PredictionSet {
            ids: Vec::new(),
            scores: Vec::new(),
            truths: Vec::new(),
            model_tag: model_tag.into(),
        };
        let mut seen = HashSet::new();
        for (row, (id, score, truth)) in triples.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&score) {
                return Err(ClassifierError::ScoreOutOfRange { row, id, score });
            }
            if !seen.insert(id.clone()) {
                return Err(ClassifierError::DuplicateId { row, id });
            }
            set.ids.push(id);
            set.scores.push(score);
            set.truths.push(truth);
        }
        Ok(set)
    }

    pub fn to_file(&self) -> PredictionFile {
        PredictionFile {
            model_tag: self.model_tag.clone(),
            rows: self
                .ids
                .iter()
                .zip(&self.scores)
                .map(|(id, &score)| PredictionRow { id: id.clone(), score })
                .collect(),
        }
    }
}

/// A loaded prediction set plus the manifest ids it does not cover.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPredictions {
    pub set: PredictionSet,
    pub missing_ids: Vec<String>,
}

/// Joins a prediction file with manifest labels. Missing manifest ids are a
/// coverage warning unless `strict`.
pub fn resolve_predictions(
    file: PredictionFile,
    manifest: &Manifest,
    strict: bool,
) -> Result<LoadedPredictions, ClassifierError> {
    let labels: HashMap<&str, ClassLabel> = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), r.class_label))
        .collect();
    let mut triples = Vec::with_capacity(file.rows.len());
    for (row, p) in file.rows.into_iter().enumerate() {
        let Some(&truth) = labels.get(p.id.as_str()) else {
            return Err(ClassifierError::UnknownId { row, id: p.id });
        };
        triples.push((p.id, p.score, truth));
    }
    let set = PredictionSet::from_triples(file.model_tag, triples)?;
    if set.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let covered: HashSet<&str> = set.ids.iter().map(String::as_str).collect();
    let missing_ids: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| !covered.contains(r.id.as_str()))
        .map(|r| r.id.clone())
        .collect();
    if strict && !missing_ids.is_empty() {
        return Err(ClassifierError::MissingIds(missing_ids.len(), missing_ids[0].clone()));
    }
    Ok(LoadedPredictions { set, missing_ids })
}

pub fn load_predictions(
    path: impl AsRef<Path>,
    manifest: &Manifest,
    strict: bool,
) -> Result<LoadedPredictions, ClassifierError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ClassifierError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: PredictionFile = serde_json::from_str(&text).map_err(|e| ClassifierError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    resolve_predictions(file, manifest, strict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Recall of the melanoma class; 0 when there are no melanomas.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `2 tp / (2 tp + fp + fn)`, which equals the harmonic mean of
    /// precision and sensitivity and is 0 when both are 0.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// `score >= threshold` is a melanoma call.
pub fn confusion(p: &PredictionSet, threshold: f64) -> Result<ConfusionMatrix, ClassifierError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ClassifierError::InvalidThreshold(threshold));
    }
    let mut m = ConfusionMatrix::default();
    for (&score, &truth) in p.scores.iter().zip(&p.truths) {
        match (truth, score >= threshold) {
            (ClassLabel::Melanoma, true) => m.tp += 1,
            (ClassLabel::Melanoma, false) => m.fn_ += 1,
            (ClassLabel::Benign, true) => m.fp += 1,
            (ClassLabel::Benign, false) => m.tn += 1,
        }
    }
    Ok(m)
}

/// Mann-Whitney AUC: the probability that a random melanoma outscores a
/// random benign image, ties counting one half.
///
/// Computed from midranks; twice the U statistic is an integer, so the
/// result is exactly `(2U) / (2 n_pos n_neg)`.
pub fn auc(p: &PredictionSet) -> Result<f64, ClassifierError> {
    let positives = p.truths.iter().filter(|&&t| t == ClassLabel::Melanoma).count();
    let negatives = p.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(ClassifierError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p.scores[a].total_cmp(&p.scores[b]));

    // sum over positives of doubled midranks (1-based)
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && p.scores[order[end]] == p.scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, doubled midrank = start + 1 + end
        let doubled_midrank = (start + 1 + end) as u128;
        let tied_pos = order[start..end]
            .iter()
            .filter(|&&i| p.truths[i] == ClassLabel::Melanoma)
            .count() as u128;
        doubled_rank_sum += doubled_midrank * tied_pos;
        start = end;
    }
    let np = positives as u128;
    let doubled_u = doubled_rank_sum - np * (np + 1);
    Ok(doubled_u as f64 / (2 * positives * negatives) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub model_tag: String,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: f64,
    pub threshold: f64,
}

pub fn classifier_report(p: &PredictionSet, threshold: f64) -> Result<ClassifierReport, ClassifierError> {
    let confusion = confusion(p, threshold)?;
    let auc = auc(p)?;
    Ok(ClassifierReport {
        model_tag: p.model_tag.clone(),
        confusion,
        accuracy: confusion.accuracy(),
        sensitivity: confusion.sensitivity(),
        specificity: confusion.specificity(),
        precision: confusion.precision(),
        f1: confusion.f1(),
        auc,
        threshold,
    })
}

/// Side-by-side comparison of two classifiers with per-metric deltas
/// (`b - a`).
pub fn compare_reports(
    label_a: &str,
    a: &ClassifierReport,
    label_b: &str,
    b: &ClassifierReport,
    generated_at: DateTime<Utc>,
) -> ReportBundle {
    let mut table = Table::new(
        "Classifier performance on the held-out test set",
        [
            "Training Data",
            "Accuracy (%)",
            "Melanoma AUC",
            "Melanoma F1",
            "Sensitivity (%)",
            "Specificity (%)",
            "Precision (%)",
        ],
    );
    let row = |label: &str, r: &ClassifierReport| {
        vec![
            Cell::text(label),
            Cell::percent(r.accuracy, 2),
            Cell::number(r.auc, 4),
            Cell::number(r.f1, 4),
            Cell::percent(r.sensitivity, 2),
            Cell::percent(r.specificity, 2),
            Cell::percent(r.precision, 2),
        ]
    };
    table.push_row(row(label_a, a));
    table.push_row(row(label_b, b));
    table.push_row(vec![
        Cell::text("Delta"),
        // percentage points
        Cell::delta((b.accuracy - a.accuracy) * 100.0, 2),
        Cell::delta(b.auc - a.auc, 4),
        Cell::delta(b.f1 - a.f1, 4),
        Cell::delta((b.sensitivity - a.sensitivity) * 100.0, 2),
        Cell::delta((b.specificity - a.specificity) * 100.0, 2),
        Cell::delta((b.precision - a.precision) * 100.0, 2),
    ]);
    let mut bundle = ReportBundle::new("Augmentation utility comparison", generated_at).with_table(table);
    bundle.note(ACCURACY_CAVEAT);
    bundle.note(format!(
        "Decision thresholds: {} = {}, {} = {}. Positive class: melanoma.",
        label_a, a.threshold, label_b, b.threshold
    ));
    bundle
}
