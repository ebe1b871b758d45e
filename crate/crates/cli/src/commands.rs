//! Report-producing commands. Each returns a [`ReportBundle`]; rendering is
//! left to the caller.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use synth_eval_core::classifier_eval::{auc, ConfusionMatrix, LoadedPredictions, ACCURACY_CAVEAT};
use synth_eval_core::{
    binomial_test, classifier_report, cohen_kappa, compare_reports, confusion, fid, fmd, gaussian_stats, load_manifest,
    load_predictions, read_featureset, Cell, FeatureSet, GaussianStats, ReportBundle, Sided, Table,
};

use crate::responses::{pair_responses, ResponseFile};

pub const LOWER_IS_BETTER: &str = "Lower FID and FMD are better (↓).";
pub const MODE_COVERAGE_WARNING: &str = "possible limited mode coverage";
/// FMD warns when generated samples sit closer to the real medoid than this
/// fraction of the real samples' own mean distance.
pub const MODE_COVERAGE_RATIO: f64 = 0.5;

/// Options shared by every report command.
#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub strict: bool,
    pub threshold: f64,
}

fn load_features(path: &Path) -> Result<FeatureSet> {
    Ok(read_featureset(path)?)
}

fn stats(path: &Path) -> Result<(FeatureSet, GaussianStats)> {
    let fs = load_features(path)?;
    let stats = gaussian_stats(&fs).with_context(|| format!("{}", path.display()))?;
    Ok((fs, stats))
}

/// A `--real` or `--gen` argument: `PATH`, `LABEL=PATH` or `ROW@COL=PATH`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub row: Option<String>,
    pub col: Option<String>,
    pub path: PathBuf,
}

impl std::str::FromStr for FeatureSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (label, path) = match s.split_once('=') {
            Some((label, path)) if !label.contains(['/', '\\']) => (Some(label), path),
            _ => (None, s),
        };
        if path.is_empty() {
            return Err(format!("{s:?}: empty path"));
        }
        let (row, col) = match label {
            None => (None, None),
            Some(l) => match l.split_once('@') {
                Some((r, c)) if !r.is_empty() && !c.is_empty() => (Some(r.to_string()), Some(c.to_string())),
                Some(_) => return Err(format!("{s:?}: expected ROW@COL=PATH")),
                None if l.is_empty() => return Err(format!("{s:?}: empty label")),
                None => (Some(l.to_string()), None),
            },
        };
        Ok(FeatureSpec {
            row,
            col,
            path: PathBuf::from(path),
        })
    }
}

fn fid_notes(bundle: &mut ReportBundle, jitter: f64, clamped: bool) {
    bundle.note(LOWER_IS_BETTER);
    if jitter > 0.0 {
        bundle.note(format!(
            "A covariance was numerically singular; {jitter:e} was added to both diagonals."
        ));
    }
    if clamped {
        bundle.note("A small negative FID from rounding was clamped to 0.");
    }
}

/// FID of one generated set against one real set, with its decomposition.
pub fn cmd_fid(real: &Path, gen: &Path) -> Result<ReportBundle> {
    let (real_fs, real_stats) = stats(real)?;
    let (gen_fs, gen_stats) = stats(gen)?;
    let r = fid(&real_stats, &gen_stats)?;
    let mut table = Table::new("Fréchet Inception Distance", ["Quantity", "Value"]);
    table.push_row(vec![Cell::text("FID ↓"), Cell::number(r.value, 2)]);
    table.push_row(vec![Cell::text("Mean term"), Cell::number(r.mean_term, 2)]);
    table.push_row(vec![Cell::text("Trace term"), Cell::number(r.trace_term, 2)]);
    table.push_row(vec![Cell::text("Jitter"), Cell::number(r.jitter_applied, 6)]);
    let mut bundle = ReportBundle::new("FID", synth_eval_core::report_timestamp()).with_table(table);
    bundle.note(format!(
        "real: {} ({} x {}), generated: {} ({} x {})",
        real_fs.name,
        real_fs.n(),
        real_fs.dim,
        gen_fs.name,
        gen_fs.n(),
        gen_fs.dim
    ));
    fid_notes(&mut bundle, r.jitter_applied, r.clamped);
    Ok(bundle)
}

/// Several labeled generated sets against one real set: one column per
/// label, an `FID ↓` row and optionally an `FMD ↓` row.
pub fn cmd_fid_sweep(real: &Path, gens: &[(String, PathBuf)], with_fmd: bool) -> Result<ReportBundle> {
    let (real_fs, real_stats) = stats(real)?;
    let mut headers = vec!["Metric".to_string()];
    headers.extend(gens.iter().map(|(l, _)| l.clone()));
    let mut fid_row = vec![Cell::text("FID ↓")];
    let mut fmd_row = vec![Cell::text("FMD ↓")];
    let mut jitter = 0.0f64;
    let mut clamped = false;
    for (_, path) in gens {
        let (gen_fs, gen_stats) = stats(path)?;
        let r = fid(&real_stats, &gen_stats).with_context(|| format!("{}", path.display()))?;
        jitter = jitter.max(r.jitter_applied);
        clamped |= r.clamped;
        fid_row.push(Cell::number(r.value, 2));
        if with_fmd {
            let m = fmd(&real_fs, &gen_fs).with_context(|| format!("{}", path.display()))?;
            fmd_row.push(Cell::number(m.value, 2));
        }
    }
    let mut table = Table::new("Feature-space metrics per generator", headers);
    table.push_row(fid_row);
    if with_fmd {
        table.push_row(fmd_row);
    }
    let mut bundle = ReportBundle::new("FID sweep", synth_eval_core::report_timestamp()).with_table(table);
    fid_notes(&mut bundle, jitter, clamped);
    Ok(bundle)
}

/// A grid of FIDs: rows are settings (for example a regularization weight),
/// columns are datasets, each column with its own real set.
pub fn cmd_fid_grid(
    row_header: &str,
    reals: &[(Option<String>, PathBuf)],
    cells: &[(String, String, PathBuf)],
) -> Result<ReportBundle> {
    let mut cols: Vec<&str> = Vec::new();
    let mut rows: Vec<&str> = Vec::new();
    for (r, c, _) in cells {
        if !cols.contains(&c.as_str()) {
            cols.push(c);
        }
        if !rows.contains(&r.as_str()) {
            rows.push(r);
        }
    }
    let real_for = |col: &str| -> Result<&Path> {
        if let [(None, p)] = reals {
            return Ok(p);
        }
        reals
            .iter()
            .find(|(c, _)| c.as_deref() == Some(col))
            .map(|(_, p)| p.as_path())
            .with_context(|| format!("no --real given for column {col:?} (use --real {col}=PATH)"))
    };
    let mut real_stats: HashMap<&str, GaussianStats> = HashMap::new();
    for &c in &cols {
        real_stats.insert(c, stats(real_for(c)?)?.1);
    }
    let mut values: HashMap<(&str, &str), Cell> = HashMap::new();
    let mut jitter = 0.0f64;
    let mut clamped = false;
    for (r, c, path) in cells {
        let (_, g) = stats(path)?;
        let res = fid(&real_stats[c.as_str()], &g).with_context(|| format!("{}", path.display()))?;
        jitter = jitter.max(res.jitter_applied);
        clamped |= res.clamped;
        if values.insert((r, c), Cell::number(res.value, 2)).is_some() {
            bail!("cell {r}@{c} given twice");
        }
    }
    let mut headers = vec![row_header.to_string()];
    headers.extend(cols.iter().map(|c| format!("FID ({c})")));
    let mut table = Table::new("FID per setting and dataset", headers);
    for &r in &rows {
        let mut row = vec![Cell::text(r)];
        row.extend(cols.iter().map(|&c| values.remove(&(r, c)).unwrap_or(Cell::Empty)));
        table.push_row(row);
    }
    let mut bundle = ReportBundle::new("FID grid", synth_eval_core::report_timestamp()).with_table(table);
    fid_notes(&mut bundle, jitter, clamped);
    Ok(bundle)
}

/// Dispatches `fid` arguments to the single, sweep or grid form.
pub fn cmd_fid_specs(
    reals: &[FeatureSpec],
    gens: &[FeatureSpec],
    with_fmd: bool,
    row_header: &str,
) -> Result<ReportBundle> {
    if reals.is_empty() || gens.is_empty() {
        bail!("fid needs at least one --real and one --gen");
    }
    if reals.iter().any(|s| s.col.is_some()) {
        bail!("--real takes PATH or COL=PATH");
    }
    let grid = gens.iter().filter(|g| g.col.is_some()).count();
    if grid > 0 {
        if grid != gens.len() {
            bail!("either every --gen is ROW@COL=PATH or none is");
        }
        if with_fmd {
            bail!("--fmd is not available in grid form");
        }
        let reals: Vec<(Option<String>, PathBuf)> = reals.iter().map(|s| (s.row.clone(), s.path.clone())).collect();
        let cells: Vec<(String, String, PathBuf)> = gens
            .iter()
            .map(|g| (g.row.clone().unwrap(), g.col.clone().unwrap(), g.path.clone()))
            .collect();
        return cmd_fid_grid(row_header, &reals, &cells);
    }
    if reals.len() != 1 {
        bail!("only the grid form (--gen ROW@COL=PATH) accepts several --real sets");
    }
    let real = &reals[0].path;
    match gens {
        [g] if g.row.is_none() && !with_fmd => cmd_fid(real, &g.path),
        _ => {
            let labeled: Vec<(String, PathBuf)> = gens
                .iter()
                .map(|g| {
                    let label = g.row.clone().unwrap_or_else(|| g.path.display().to_string());
                    (label, g.path.clone())
                })
                .collect();
            cmd_fid_sweep(real, &labeled, with_fmd)
        }
    }
}

/// FMD with the medoid id and the per-sample distance summary.
pub fn cmd_fmd(real: &Path, gen: &Path) -> Result<ReportBundle> {
    let real_fs = load_features(real)?;
    let gen_fs = load_features(gen)?;
    let r = fmd(&real_fs, &gen_fs)?;
    let s = r.summary();
    // spread of the real set around its own medoid, for the coverage check
    let real_spread = fmd(&real_fs, &real_fs)?.value;

    let mut table = Table::new("Fréchet Medoid Distance", ["Quantity", "Value"]);
    table.push_row(vec![Cell::text("FMD ↓"), Cell::number(r.value, 2)]);
    table.push_row(vec![Cell::text("Medoid"), Cell::text(&r.medoid_id)]);
    table.push_row(vec![
        Cell::text("Generated samples"),
        Cell::int(r.per_sample.len() as i64),
    ]);
    table.push_row(vec![Cell::text("Min distance"), Cell::number(s.min, 2)]);
    table.push_row(vec![Cell::text("Median distance"), Cell::number(s.median, 2)]);
    table.push_row(vec![Cell::text("Max distance"), Cell::number(s.max, 2)]);
    table.push_row(vec![Cell::text("Real mean distance"), Cell::number(real_spread, 2)]);
    let mut bundle = ReportBundle::new("FMD", synth_eval_core::report_timestamp()).with_table(table);
    bundle.note("FMD: mean Euclidean distance from each generated sample to the real medoid.");
    bundle.note(LOWER_IS_BETTER);
    if real_spread > 0.0 && r.value < MODE_COVERAGE_RATIO * real_spread {
        bundle.note(format!(
            "Warning: {MODE_COVERAGE_WARNING}. Generated samples average {:.2} from the medoid, \
             real samples {:.2}; check FID before reading a low FMD as good.",
            r.value, real_spread
        ));
    }
    Ok(bundle)
}

fn load_for(path: &Path, manifest: &synth_eval_core::Manifest, opts: Options) -> Result<LoadedPredictions> {
    load_predictions(path, manifest, opts.strict).with_context(|| format!("{}", path.display()))
}

fn coverage_note(bundle: &mut ReportBundle, path: &Path, loaded: &LoadedPredictions) {
    if let Some(first) = loaded.missing_ids.first() {
        let msg = format!(
            "Warning: {}: {} manifest ids have no prediction (first: {first}).",
            path.display(),
            loaded.missing_ids.len()
        );
        log::warn!("{msg}");
        bundle.note(msg);
    }
}

fn count_cell(num: u64, den: u64) -> Cell {
    Cell::text(format!("{num}/{den}"))
}

fn rate_row(label: &str, value: f64, num: u64, den: u64) -> Vec<Cell> {
    if den == 0 {
        vec![Cell::text(label), Cell::text("n/a"), count_cell(num, den)]
    } else {
        vec![Cell::text(label), Cell::percent(value, 1), count_cell(num, den)]
    }
}

/// Frozen-classifier evaluation: the confusion matrix with actual classes as
/// rows and predicted classes as columns, then the derived rates.
pub fn cmd_downstream(manifest: &Path, predictions: &Path, opts: Options) -> Result<ReportBundle> {
    let m = load_manifest(manifest)?;
    let loaded = load_for(predictions, &m, opts)?;
    let p = &loaded.set;
    let c: ConfusionMatrix = confusion(p, opts.threshold)?;

    let mut matrix = Table::new("Confusion matrix", ["Actual \\ Predicted", "Melanoma", "Benign"]);
    matrix.push_row(vec![
        Cell::text("Melanoma"),
        Cell::int(c.tp as i64),
        Cell::int(c.fn_ as i64),
    ]);
    matrix.push_row(vec![
        Cell::text("Benign"),
        Cell::int(c.fp as i64),
        Cell::int(c.tn as i64),
    ]);

    let mut metrics = Table::new("Metrics", ["Metric", "Value", "Count"]);
    metrics.push_row(rate_row("Sensitivity", c.sensitivity(), c.tp, c.tp + c.fn_));
    metrics.push_row(rate_row("Specificity", c.specificity(), c.tn, c.tn + c.fp));
    metrics.push_row(rate_row("Precision", c.precision(), c.tp, c.tp + c.fp));
    metrics.push_row(rate_row("Accuracy", c.accuracy(), c.tp + c.tn, c.total()));
    metrics.push_row(vec![Cell::text("F1"), Cell::number(c.f1(), 4), Cell::Empty]);
    match auc(p) {
        Ok(a) => metrics.push_row(vec![Cell::text("AUC"), Cell::number(a, 4), Cell::Empty]),
        Err(_) => metrics.push_row(vec![Cell::text("AUC"), Cell::text("n/a"), Cell::Empty]),
    }

    let mut bundle = ReportBundle::new(
        format!("Frozen classifier: {}", m.name),
        synth_eval_core::report_timestamp(),
    )
    .with_table(matrix)
    .with_table(metrics);
    bundle.note(format!(
        "Model {}; threshold {}; positive class melanoma.",
        p.model_tag, opts.threshold
    ));
    coverage_note(&mut bundle, predictions, &loaded);
    Ok(bundle)
}

/// Two classifiers on the same test set, with per-metric deltas (b - a).
pub fn cmd_compare(manifest: &Path, a: (&str, &Path), b: (&str, &Path), opts: Options) -> Result<ReportBundle> {
    let m = load_manifest(manifest)?;
    let la = load_for(a.1, &m, opts)?;
    let lb = load_for(b.1, &m, opts)?;
    let ra = classifier_report(&la.set, opts.threshold).with_context(|| format!("{}", a.1.display()))?;
    let rb = classifier_report(&lb.set, opts.threshold).with_context(|| format!("{}", b.1.display()))?;
    let mut bundle = compare_reports(a.0, &ra, b.0, &rb, synth_eval_core::report_timestamp());
    debug_assert!(bundle.notes.iter().any(|n| n == ACCURACY_CAVEAT));
    coverage_note(&mut bundle, a.1, &la);
    coverage_note(&mut bundle, b.1, &lb);
    Ok(bundle)
}

/// Cohen's kappa between two raters' response files.
pub fn cmd_kappa(a: &Path, b: &Path) -> Result<ReportBundle> {
    let fa = ResponseFile::load(a)?;
    let fb = ResponseFile::load(b)?;
    let pairs = pair_responses(&fa, &fb)?;
    let k = cohen_kappa(&pairs)?;

    let mut table = Table::new(
        "Pairwise agreement (Cohen's kappa)",
        ["Comparison", "Cohen's κ", "p-Value", "Agreement"],
    );
    table.push_row(vec![
        Cell::text(format!("{} vs. {}", fa.rater_tag, fb.rater_tag)),
        Cell::number(k.kappa, 3),
        Cell::p_value(k.p_value),
        Cell::text(k.band.label()),
    ]);
    let mut detail = Table::new("Kappa details", ["Items", "Observed", "Expected", "SE", "Z"]);
    detail.push_row(vec![
        Cell::int(k.n as i64),
        Cell::number(k.po, 4),
        Cell::number(k.pe, 4),
        Cell::number(k.se, 5),
        Cell::number(k.z, 3),
    ]);
    let mut bundle = ReportBundle::new("Inter-rater agreement", synth_eval_core::report_timestamp())
        .with_table(table)
        .with_table(detail);
    bundle.note("SE = sqrt(Po (1 - Po) / (n (1 - Pe)^2)); Z = kappa / SE; two-sided normal p-value.");
    bundle.note("Bands: < 0 Poor, 0-0.20 Slight, 0.21-0.40 Fair, 0.41-0.60 Moderate, 0.61-0.80 Substantial, 0.81-1 Almost perfect.");
    Ok(bundle)
}

/// Exact binomial test of `k` successes in `n` trials against `p0`.
pub fn cmd_binomial(k: u64, n: u64, p0: f64, two_sided: bool) -> Result<ReportBundle> {
    let sided = if two_sided { Sided::TwoSided } else { Sided::Greater };
    let r = binomial_test(k, n, p0, sided)?;
    let mut table = Table::new(
        "Exact binomial test",
        ["k", "n", "p0", "Alternative", "Proportion", "p-Value"],
    );
    table.push_row(vec![
        Cell::int(k as i64),
        Cell::int(n as i64),
        Cell::number(p0, 3),
        Cell::text(if two_sided { "two-sided" } else { "greater" }),
        Cell::percent(k as f64 / n as f64, 1),
        Cell::p_value(r.p_value),
    ]);
    let mut bundle = ReportBundle::new("Binomial test", synth_eval_core::report_timestamp()).with_table(table);
    bundle.note(format!("p = {:.6e}", r.p_value));
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_specs() {
        let s: FeatureSpec = "a/b.fvec".parse().unwrap();
        assert_eq!((s.row, s.col), (None, None));
        let s: FeatureSpec = "StyleGAN2=x.fvec".parse().unwrap();
        assert_eq!(
            (s.row.as_deref(), s.col, s.path),
            (Some("StyleGAN2"), None, PathBuf::from("x.fvec"))
        );
        let s: FeatureSpec = "0.8@ISIC 2018=x.fvec".parse().unwrap();
        assert_eq!((s.row.as_deref(), s.col.as_deref()), (Some("0.8"), Some("ISIC 2018")));
        // '=' inside a directory name is part of the path
        let s: FeatureSpec = "runs/g=8/x.fvec".parse().unwrap();
        assert_eq!(s.path, PathBuf::from("runs/g=8/x.fvec"));
        assert!("@c=x".parse::<FeatureSpec>().is_err());
        assert!("a=".parse::<FeatureSpec>().is_err());
    }

    #[test]
    fn binomial_report() {
        let b = cmd_binomial(142, 200, 0.5, false).unwrap();
        let t = &b.tables[0];
        assert_eq!(t.rows[0][5].render(), "< 0.001");
        assert_eq!(t.rows[0][4].render(), "71.0%");
    }
}
