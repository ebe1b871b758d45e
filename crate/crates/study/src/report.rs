//! Rater accuracy and pairwise agreement tables for a closed study.

use chrono::{DateTime, Utc};
use synth_eval_core::rater_stats::{binomial_test, cohen_kappa, rater_outcome, RaterOutcome, Sided};
use synth_eval_core::{Cell, Origin, ReportBundle, Table};

use crate::error::StudyError;
use crate::model::{RaterSession, SessionKind, StudyState};

pub const ACCURACY_CAPTION: &str = "Rater accuracy on the real-vs-synthetic task";
pub const AGREEMENT_CAPTION: &str = "Pairwise agreement (Cohen's kappa)";
pub const COUNTS_CAPTION: &str = "Response counts";
pub const HUMAN_MEAN: &str = "Human Mean";

/// Per-rater figures that feed the tables.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterRow {
    pub outcome: RaterOutcome,
    pub kind: SessionKind,
    pub p_value: f64,
}

pub fn rater_rows(state: &StudyState) -> Result<Vec<RaterRow>, StudyError> {
    let truths = state.study.truths();
    ordered_sessions(state)
        .into_iter()
        .map(|s| {
            let pairs: Vec<(Origin, Origin)> = truths.iter().copied().zip(s.answers()).collect();
            let outcome = rater_outcome(&pairs, s.rater_tag.clone())?;
            let p_value = binomial_test(outcome.correct(), outcome.n(), 0.5, Sided::Greater)?.p_value;
            Ok(RaterRow {
                outcome,
                kind: s.kind,
                p_value,
            })
        })
        .collect()
}

/// Completed sessions, humans first, each group in opening order.
fn ordered_sessions(state: &StudyState) -> Vec<&RaterSession> {
    let (mut humans, machines): (Vec<_>, Vec<_>) =
        state.completed_sessions().partition(|s| s.kind == SessionKind::Human);
    humans.extend(machines);
    humans
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Builds the report bundle. Requires at least one completed session.
pub fn study_report(state: &StudyState, generated_at: DateTime<Utc>) -> Result<ReportBundle, StudyError> {
    let rows = rater_rows(state)?;
    if rows.is_empty() {
        return Err(StudyError::NoCompletedSessions(state.study.study_id.clone()));
    }
    let humans: Vec<&RaterRow> = rows.iter().filter(|r| r.kind == SessionKind::Human).collect();
    let machines: Vec<&RaterRow> = rows.iter().filter(|r| r.kind == SessionKind::Machine).collect();
    let with_mean = humans.len() >= 2;

    let mut headers = vec!["Metric".to_string()];
    headers.extend(humans.iter().map(|r| r.outcome.rater_tag.clone()));
    if with_mean {
        headers.push(HUMAN_MEAN.into());
    }
    headers.extend(machines.iter().map(|r| r.outcome.rater_tag.clone()));
    let mut accuracy = Table::new(ACCURACY_CAPTION, headers);

    type Metric = fn(&RaterOutcome) -> f64;
    let metrics: [(&str, Metric); 4] = [
        ("Overall Accuracy", RaterOutcome::overall_accuracy),
        ("Real Accuracy", RaterOutcome::real_accuracy),
        ("Synthetic Accuracy", RaterOutcome::synth_accuracy),
        ("Accepted as Real", RaterOutcome::accepted_as_real),
    ];
    for (i, (label, metric)) in metrics.iter().enumerate() {
        let overall = i == 0;
        let mut row = vec![Cell::text(*label)];
        for r in &humans {
            row.push(if overall {
                Cell::percent_with_p(metric(&r.outcome), 1, r.p_value)
            } else {
                Cell::percent(metric(&r.outcome), 1)
            });
        }
        if with_mean {
            row.push(Cell::percent(mean(humans.iter().map(|r| metric(&r.outcome))), 1));
        }
        for r in &machines {
            row.push(Cell::percent(metric(&r.outcome), 1));
        }
        accuracy.push_row(row);
    }

    let mut counts = Table::new(
        COUNTS_CAPTION,
        [
            "Rater",
            "Kind",
            "Real Items",
            "Real Correct",
            "Synthetic Items",
            "Synthetic Correct",
            "Binomial p (greater)",
        ],
    );
    for r in &rows {
        let o = &r.outcome;
        counts.push_row(vec![
            Cell::text(&o.rater_tag),
            Cell::text(match r.kind {
                SessionKind::Human => "human",
                SessionKind::Machine => "machine",
            }),
            Cell::int(o.n_real as i64),
            Cell::int(o.correct_real as i64),
            Cell::int(o.n_synth as i64),
            Cell::int(o.correct_synth as i64),
            Cell::p_value(r.p_value),
        ]);
    }

    let mut agreement = Table::new(AGREEMENT_CAPTION, ["Comparison", "Cohen's κ", "p-Value", "Agreement"]);
    let sessions = ordered_sessions(state);
    let mut undefined = Vec::new();
    for (i, a) in sessions.iter().enumerate() {
        for b in &sessions[i + 1..] {
            let label = format!("{} vs. {}", a.rater_tag, b.rater_tag);
            let pairs: Vec<(Origin, Origin)> = a.answers().into_iter().zip(b.answers()).collect();
            match cohen_kappa(&pairs) {
                Ok(k) => agreement.push_row(vec![
                    Cell::text(label),
                    Cell::number(k.kappa, 3),
                    Cell::p_value(k.p_value),
                    Cell::text(k.band.label()),
                ]),
                Err(e) => undefined.push(format!("{label}: {e}")),
            }
        }
    }

    let mut bundle = ReportBundle::new(format!("Rating study {}", state.study.study_id), generated_at)
        .with_table(accuracy)
        .with_table(counts);
    if !agreement.rows.is_empty() {
        bundle = bundle.with_table(agreement);
    }
    bundle.note(format!(
        "{} items ({} real, {} synthetic), seed {}, item order hash {}.",
        state.study.total(),
        state.study.n_real,
        state.study.n_synth,
        state.study.seed,
        state.study.item_order_hash
    ));
    bundle.note("Overall accuracy p-values: exact one-sided binomial test against 50% chance.");
    bundle.note("Accepted as Real: share of synthetic images labeled real.");
    if with_mean {
        bundle.note("Human Mean: arithmetic mean over human raters.");
    }
    bundle.note("Kappa p-values: two-sided z-test. Agreement bands follow Landis and Koch.");
    for u in undefined {
        bundle.note(format!("Kappa undefined for {u}"));
    }
    Ok(bundle)
}
