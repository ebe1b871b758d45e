//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p synth-eval-cli --test acceptance`.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use synth_eval_cli::bundled::{fixtures_dir, mode_collapse_real};
use synth_eval_cli::commands::{cmd_compare, cmd_downstream, cmd_fmd, Options, MODE_COVERAGE_WARNING};
use synth_eval_core::fixtures::{
    count_faithful_answers, kappa_joint_table, study_manifests, write_study_fixture, RATER_TARGETS,
};
use synth_eval_core::frechet::{fid, fmd, gaussian_stats, medoid, sqrtm_trace, GaussianStats};
use synth_eval_core::{
    auc, binomial_test, cohen_kappa, interpret_band, load_manifest, ClassLabel, FeatureSet, Origin, PredictionSet,
    ReportBundle, Sided,
};
use synth_eval_oracles as oracle;
use synth_eval_study::event_log::replay_bytes;
use synth_eval_study::{NextItem, StudyService};

/// Analytic FID cases.
const TOL_ANALYTIC: f64 = 1e-9;
/// FID(A, A) upper bound.
const TOL_IDENTITY: f64 = 1e-6;
/// Relative tolerance for FID symmetry and the sqrtm_trace oracle.
const TOL_REL_SQRTM: f64 = 1e-6;
/// Relative tolerance of the binomial p-value against the exact tail sum.
const TOL_REL_BINOMIAL: f64 = 1e-12;
/// Absolute tolerance on the kappa hand fixture's SE and Z.
const TOL_KAPPA_SE_Z: f64 = 1e-3;

const BUDGET_FID: Duration = Duration::from_secs(10);
const BUDGET_FMD: Duration = Duration::from_secs(5);
const BUDGET_SERVICE: Duration = Duration::from_secs(60);

/// Item-order hash of `study_manifests(100)` drawn with seed 7. Pinned so a
/// change of platform, RNG stream or serialization shows up here.
const GOLDEN_ORDER_HASH_SEED_7: &str = "a085d8d26d7e622c1f4e4aaece0a1dbb7e02596591f61b6a18d58f33e0f38c1c";

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Result<String>,
}

fn main() -> ExitCode {
    std::env::set_var("SOURCE_DATE_EPOCH", "0");
    let criteria = [
        Criterion {
            id: 1,
            name: "FID analytic suite",
            budget: Some(BUDGET_FID),
            run: fid_suite,
        },
        Criterion {
            id: 2,
            name: "FMD oracle suite",
            budget: Some(BUDGET_FMD),
            run: fmd_suite,
        },
        Criterion {
            id: 3,
            name: "Frozen-classifier count reproduction",
            budget: None,
            run: frozen_counts,
        },
        Criterion {
            id: 4,
            name: "Augmentation comparison table",
            budget: None,
            run: augmentation_table,
        },
        Criterion {
            id: 5,
            name: "Rater accuracy table reproduction",
            budget: None,
            run: rater_table,
        },
        Criterion {
            id: 6,
            name: "Statistics suite",
            budget: None,
            run: statistics_suite,
        },
        Criterion {
            id: 7,
            name: "Service durability and blindness",
            budget: Some(BUDGET_SERVICE),
            run: service_suite,
        },
        Criterion {
            id: 8,
            name: "Item-order determinism",
            budget: None,
            run: determinism,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(anyhow::anyhow!("panicked: {msg}"))
            })
            .and_then(|detail| match c.budget {
                Some(b) if start.elapsed() > b => {
                    anyhow::bail!("took {:.2?}, budget {b:?} ({detail})", start.elapsed())
                }
                _ => Ok(detail),
            });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {} ({secs:.2} s): {detail}", c.id, c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {} {} ({secs:.2} s): {e:#}", c.id, c.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn rows_fs(rows: &[Vec<f32>]) -> FeatureSet {
    FeatureSet::from_rows("t", rows).expect("valid rows")
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> oracle::Mat {
    let g: oracle::Mat = (0..d)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut a = oracle::matmul(&g, &oracle::transpose(&g));
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 0.05;
    }
    a
}

fn to_na(a: &oracle::Mat) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a.len(), |i, j| a[i][j])
}

fn fid_suite() -> Result<String> {
    let one_d = |real: &[f32], gen: &[f32]| -> Result<f64> {
        let col = |v: &[f32]| rows_fs(&v.iter().map(|&x| vec![x]).collect::<Vec<_>>());
        Ok(fid(&gaussian_stats(&col(real))?, &gaussian_stats(&col(gen))?)?.value)
    };
    let shift = one_d(&[-1.0, 0.0, 1.0], &[1.0, 2.0, 3.0])?;
    ensure!((shift - 4.0).abs() <= TOL_ANALYTIC, "mean-shift case gave {shift}");
    let scale = one_d(&[-1.0, 0.0, 1.0], &[-2.0, 0.0, 2.0])?;
    ensure!((scale - 1.0).abs() <= TOL_ANALYTIC, "variance case gave {scale}");
    let s = |mu: f64, var: f64| GaussianStats::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, var), 10);
    let direct = fid(&s(0.0, 1.0)?, &s(2.0, 1.0)?)?;
    ensure!((direct.value - 4.0).abs() <= TOL_ANALYTIC && (direct.mean_term - 4.0).abs() <= TOL_ANALYTIC);
    let direct = fid(&s(0.0, 1.0)?, &s(0.0, 4.0)?)?;
    ensure!((direct.value - 1.0).abs() <= TOL_ANALYTIC && (direct.trace_term - 1.0).abs() <= TOL_ANALYTIC);

    let mut rng = ChaCha8Rng::seed_from_u64(0xF1D);
    let mut worst_sym: f64 = 0.0;
    let mut worst_id: f64 = 0.0;
    for case in 0..100 {
        let mut stats = || -> Result<GaussianStats> {
            let mu = DVector::from_fn(8, |_, _| rng.gen_range(-2.0..2.0));
            Ok(GaussianStats::new(mu, to_na(&random_spd(&mut rng, 8)), 100)?)
        };
        let (a, b) = (stats()?, stats()?);
        let ab = fid(&a, &b)?.value;
        let ba = fid(&b, &a)?.value;
        worst_sym = worst_sym.max(rel(ab, ba));
        worst_id = worst_id.max(fid(&a, &a)?.value);
        ensure!(rel(ab, ba) <= TOL_REL_SQRTM, "pair {case}: {ab} vs {ba}");
        ensure!(fid(&a, &a)?.value <= TOL_IDENTITY, "pair {case}: FID(A,A) too large");
    }
    let mut worst_oracle: f64 = 0.0;
    for case in 0..200 {
        let d = 1 + case % 16;
        let a = random_spd(&mut rng, d);
        let b = random_spd(&mut rng, d);
        let got = sqrtm_trace(&to_na(&a), &to_na(&b))?;
        let want = oracle::trace_sqrt_product(&a, &b);
        worst_oracle = worst_oracle.max(rel(got, want));
        ensure!(rel(got, want) <= TOL_REL_SQRTM, "pair {case} (d={d}): {got} vs {want}");
    }
    Ok(format!(
        "4.0/1.0 exact; max FID(A,A) {worst_id:.1e}; max asymmetry {worst_sym:.1e}; max oracle error {worst_oracle:.1e}"
    ))
}

fn fmd_suite() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF3D);
    let widen = |rows: &[Vec<f32>]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
    };
    let mut cases = 0;
    for n in 1..=20 {
        for d in 1..=8 {
            // integer grid values make exact distance ties common
            let mut grid = |k: usize| -> Vec<Vec<f32>> {
                (0..k)
                    .map(|_| (0..d).map(|_| f32::from(rng.gen_range(-3i8..=3))).collect())
                    .collect()
            };
            let real = grid(n);
            let gen = grid(1 + (n * d) % 20);
            let r = fmd(&rows_fs(&real), &rows_fs(&gen))?;
            ensure!(
                r.medoid_index == oracle::medoid(&widen(&real)),
                "n={n} d={d}: medoid differs"
            );
            ensure!(
                r.value == oracle::fmd(&widen(&real), &widen(&gen)),
                "n={n} d={d}: FMD differs"
            );
            cases += 1;
        }
    }
    let three = rows_fs(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![4.0, 0.0]]);
    ensure!(fmd(&three, &three)?.value == 4.0 / 3.0, "3-point fixture");

    let square = rows_fs(&[vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]]);
    for _ in 0..50 {
        ensure!(medoid(&square).1 == 0, "tie must go to the lowest index");
    }

    let fixtures = fixtures_dir().join("features");
    let real_path = fixtures.join("mode_collapse_real.fvec");
    let gen_path = fixtures.join("mode_collapse_gen.fvec");
    let real = synth_eval_core::read_featureset(&real_path)?;
    let gen = synth_eval_core::read_featureset(&gen_path)?;
    ensure!(real.n() == mode_collapse_real().len());
    let collapse_fmd = fmd(&real, &gen)?.value;
    let collapse_fid = fid(&gaussian_stats(&real)?, &gaussian_stats(&gen)?)?.value;
    ensure!(collapse_fmd == 0.0, "mode-collapse FMD {collapse_fmd}");
    ensure!(collapse_fid > 0.0, "mode-collapse FID {collapse_fid}");
    let report = cmd_fmd(&real_path, &gen_path)?;
    ensure!(
        report.notes.iter().any(|n| n.contains(MODE_COVERAGE_WARNING)),
        "no coverage warning"
    );
    Ok(format!(
        "{cases} brute-force fixtures exact; ties stable; collapse FMD 0, FID {collapse_fid:.3}"
    ))
}

fn render(b: &ReportBundle, caption: &str, row: &str, col: &str) -> Result<String> {
    Ok(b.table(caption)
        .with_context(|| format!("no table {caption}"))?
        .cell(row, col)
        .with_context(|| format!("no cell {row}/{col}"))?
        .render())
}

fn frozen_counts() -> Result<String> {
    let dir = fixtures_dir().join("downstream");
    let opts = Options {
        strict: true,
        threshold: 0.5,
    };
    let real = cmd_downstream(
        &dir.join("real_set_manifest.json"),
        &dir.join("real_set_predictions.json"),
        opts,
    )?;
    let counts = |b: &ReportBundle| -> Result<[String; 4]> {
        Ok([
            render(b, "Confusion", "Melanoma", "Melanoma")?,
            render(b, "Confusion", "Melanoma", "Benign")?,
            render(b, "Confusion", "Benign", "Melanoma")?,
            render(b, "Confusion", "Benign", "Benign")?,
        ])
    };
    ensure!(
        counts(&real)? == ["1048", "13", "0", "360"],
        "real set {:?}",
        counts(&real)?
    );
    let sens = format!(
        "{} ({})",
        render(&real, "Metrics", "Sensitivity", "Value")?,
        render(&real, "Metrics", "Sensitivity", "Count")?
    );
    ensure!(sens == "98.8% (1048/1061)", "real sensitivity {sens}");

    let synth = cmd_downstream(
        &dir.join("synthetic_set_manifest.json"),
        &dir.join("synthetic_set_predictions.json"),
        opts,
    )?;
    let c = counts(&synth)?;
    ensure!(c[0] == "833" && c[1] == "167", "synthetic set {c:?}");
    let sens2 = format!(
        "{} ({})",
        render(&synth, "Metrics", "Sensitivity", "Value")?,
        render(&synth, "Metrics", "Sensitivity", "Count")?
    );
    ensure!(sens2 == "83.3% (833/1000)", "synthetic sensitivity {sens2}");
    Ok(format!("tp/fn/fp/tn 1048/13/0/360 and 833/167; {sens}, {sens2}"))
}

fn augmentation_table() -> Result<String> {
    let dir = fixtures_dir().join("augmentation");
    let b = cmd_compare(
        &dir.join("test_manifest.json"),
        ("Real-only", &dir.join("real_only_predictions.json")),
        ("Real + Synthetic", &dir.join("real_plus_synthetic_predictions.json")),
        Options {
            strict: true,
            threshold: 0.5,
        },
    )?;
    let cap = "Classifier performance";
    let got = [
        render(&b, cap, "Real-only", "Melanoma AUC")?,
        render(&b, cap, "Real + Synthetic", "Melanoma AUC")?,
        render(&b, cap, "Delta", "Melanoma AUC")?,
        render(&b, cap, "Real-only", "Melanoma F1")?,
        render(&b, cap, "Real + Synthetic", "Melanoma F1")?,
        render(&b, cap, "Delta", "Melanoma F1")?,
    ];
    ensure!(
        got == ["0.9252", "0.9445", "+0.0193", "0.1682", "0.2586", "+0.0904"],
        "rendered {got:?}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C);
    for case in 0..500 {
        let n = rng.gen_range(2..=12);
        let mut truths: Vec<ClassLabel> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    ClassLabel::Melanoma
                } else {
                    ClassLabel::Benign
                }
            })
            .collect();
        truths[0] = ClassLabel::Melanoma;
        truths[1] = ClassLabel::Benign;
        // coarse grid so ties are frequent
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0u8..=5)) / 5.0).collect();
        let set = PredictionSet::from_triples("r", (0..n).map(|i| (format!("i{i}"), scores[i], truths[i])))?;
        let pos: Vec<f64> = (0..n)
            .filter(|&i| truths[i] == ClassLabel::Melanoma)
            .map(|i| scores[i])
            .collect();
        let neg: Vec<f64> = (0..n)
            .filter(|&i| truths[i] == ClassLabel::Benign)
            .map(|i| scores[i])
            .collect();
        let got = auc(&set)?;
        let want = oracle::auc_pairs(&pos, &neg);
        ensure!(got == want, "case {case}: {got} vs {want}");
    }
    Ok(format!(
        "AUC {} vs {} ({}), F1 {} vs {}; 500 oracle sets exact",
        got[0], got[1], got[2], got[3], got[4]
    ))
}

fn rater_table() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let (svc, _) = StudyService::open(dir.path())?;
    let (real, synth) = study_manifests(100);
    let study_id = svc.create_study(&real, &synth, 100, 2024)?.study_id;
    let truths = svc.snapshot(&study_id)?.study.truths();
    let ids: Vec<String> = svc.study_items(&study_id)?.into_iter().map(|i| i.item_id).collect();
    for (tag, real_correct, synth_correct, machine) in RATER_TARGETS {
        let answers = count_faithful_answers(&truths, real_correct, synth_correct);
        if machine {
            let responses: Vec<(String, Origin)> = ids.iter().cloned().zip(answers).collect();
            svc.import_session(&study_id, tag, &responses)?;
            continue;
        }
        let sid = svc.open_session(&study_id, tag)?.session_id;
        for answer in answers {
            let NextItem::Item { item_id, .. } = svc.next_item(&sid)? else {
                anyhow::bail!("session ended early");
            };
            svc.submit_response(&sid, &item_id, answer, None)?;
        }
    }
    svc.close_study(&study_id)?;
    let b = svc.report(&study_id)?;
    let cap = "Rater accuracy";
    let cols = ["Dermatologist 1", "Dermatologist 2", "Human Mean", "Discriminator"];
    let expected: [(&str, [&str; 4]); 4] = [
        ("Overall Accuracy", ["71.0%", "62.0%", "66.5%", "59.5%"]),
        ("Real Accuracy", ["51.0%", "70.0%", "60.5%", "35.0%"]),
        ("Synthetic Accuracy", ["91.0%", "54.0%", "72.5%", "84.0%"]),
        ("Accepted as Real", ["9.0%", "46.0%", "27.5%", "16.0%"]),
    ];
    let mut cells = 0;
    for (row, want) in expected {
        for (col, w) in cols.iter().zip(want) {
            let got = render(&b, cap, row, col)?;
            // human accuracy cells carry a p-value annotation after the percentage
            let pct = got.split(" (").next().unwrap_or_default();
            ensure!(pct == w, "{row}/{col}: {got} (want {w})");
            cells += 1;
        }
    }
    Ok(format!("all {cells} cells match, including the Human Mean column"))
}

fn statistics_suite() -> Result<String> {
    let mut checked = 0u64;
    for n in 1..=200u64 {
        for k in 0..=n {
            let got = binomial_test(k, n, 0.5, Sided::Greater)?.p_value;
            let want = oracle::binomial_upper_tail(k, n, 1, 2);
            ensure!(rel(got, want) <= TOL_REL_BINOMIAL, "k={k} n={n}: {got:e} vs {want:e}");
            checked += 1;
        }
    }
    let p71 = binomial_test(71, 100, 0.5, Sided::Greater)?.p_value;
    ensure!(p71 < 0.001, "71/100 p = {p71}");
    // each dermatologist labeled 200 items, so the published cells are 142/200 and 124/200
    let p142 = binomial_test(142, 200, 0.5, Sided::Greater)?.p_value;
    let p124 = binomial_test(124, 200, 0.5, Sided::Greater)?.p_value;
    ensure!(p142 < 0.001 && p124 < 0.001, "142/200 p = {p142}, 124/200 p = {p124}");
    // the per-100 reading of the second dermatologist does not reach 0.001
    let p62 = binomial_test(62, 100, 0.5, Sided::Greater)?.p_value;
    ensure!((p62 - 0.0105).abs() < 5e-4, "62/100 p = {p62}");

    let k = cohen_kappa(&kappa_joint_table())?;
    ensure!((k.kappa - 0.30).abs() < 1e-12, "kappa {}", k.kappa);
    ensure!((k.se - 0.06745).abs() <= TOL_KAPPA_SE_Z, "se {}", k.se);
    ensure!((k.z - 4.448).abs() <= TOL_KAPPA_SE_Z, "z {}", k.z);
    for v in [0.173, 0.042] {
        ensure!(interpret_band(v).label() == "Slight", "{v} -> {}", interpret_band(v));
    }
    Ok(format!(
        "{checked} binomial cases within {TOL_REL_BINOMIAL:e}; 71/100 p={p71:.2e}; kappa 0.300 se {:.5} z {:.3}; \
         recorded deviation: 62/100 p={p62:.4} while 124/200 p={p124:.2e} (< 0.001 as published)",
        k.se, k.z
    ))
}

type Acked = (String, String, Origin);

fn by_session(rs: impl IntoIterator<Item = Acked>) -> BTreeMap<String, Vec<(String, Origin)>> {
    let mut m: BTreeMap<String, Vec<(String, Origin)>> = BTreeMap::new();
    for (s, i, a) in rs {
        m.entry(s).or_default().push((i, a));
    }
    m
}

fn durability() -> Result<usize> {
    let dir = tempfile::tempdir()?;
    let (svc, _) = StudyService::open(dir.path())?;
    let (real, synth) = study_manifests(25);
    let study_id = svc.create_study(&real, &synth, 25, 50)?.study_id;
    let sessions = [
        svc.open_session(&study_id, "a")?.session_id,
        svc.open_session(&study_id, "b")?.session_id,
    ];
    let log = svc.log_path(&study_id);
    let mut acked: Vec<(Acked, u64)> = Vec::new();
    for step in 0..100 {
        let sid = &sessions[step % 2];
        let NextItem::Item { item_id, .. } = svc.next_item(sid)? else {
            anyhow::bail!("session ended early");
        };
        let answer = if step % 3 == 0 { Origin::Real } else { Origin::Synthetic };
        svc.submit_response(sid, &item_id, answer, None)?;
        acked.push(((sid.clone(), item_id, answer), std::fs::metadata(&log)?.len()));
    }
    svc.close_study(&study_id)?;
    let bytes = std::fs::read(&log)?;
    let boundaries: Vec<usize> = std::iter::once(0)
        .chain(
            bytes
                .iter()
                .enumerate()
                .filter(|(_, &b)| b == b'\n')
                .map(|(i, _)| i + 1),
        )
        .collect();
    let mut cuts = 0;
    for w in boundaries.windows(2) {
        // the boundary itself plus a crash inside the following event
        for cut in [w[0], (w[0] + w[1]) / 2, w[1] - 1] {
            let replay = replay_bytes(&bytes[..cut], Path::new("crash"))?;
            let got: BTreeMap<_, _> = replay
                .state
                .map(|s| {
                    by_session(s.sessions.iter().flat_map(|x| {
                        x.responses
                            .iter()
                            .map(move |r| (x.session_id.clone(), r.item_id.clone(), r.answer))
                    }))
                })
                .unwrap_or_default()
                .into_iter()
                .filter(|(_, v)| !v.is_empty())
                .collect();
            let want = by_session(
                acked
                    .iter()
                    .filter(|(_, len)| *len as usize <= cut)
                    .map(|(r, _)| r.clone()),
            );
            ensure!(got == want, "crash after {cut} bytes lost or invented responses");
            cuts += 1;
        }
    }
    Ok(cuts)
}

struct Server(std::process::Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Runs a 20-item session over real HTTP against the built binary and
/// returns every byte a rater received, plus the forbidden tokens.
fn wire_capture() -> Result<(Vec<u8>, Vec<String>, Vec<u8>)> {
    let data = tempfile::tempdir()?;
    let images = tempfile::tempdir()?;
    let (real, synth) = write_study_fixture(images.path(), 10)?;
    let mut child = Command::new(env!("CARGO_BIN_EXE_synth-eval"))
        .args(["study", "serve", "--addr", "127.0.0.1:0", "--data-dir"])
        .arg(data.path())
        .stdout(Stdio::piped())
        .spawn()?;
    let mut banner = String::new();
    BufReader::new(child.stdout.take().context("no stdout")?).read_line(&mut banner)?;
    let server = Server(child);
    let base = banner
        .trim()
        .strip_prefix("listening on ")
        .context("no banner")?
        .to_string();
    let http = reqwest::blocking::Client::new();
    let capture = |wire: &mut Vec<u8>, resp: reqwest::blocking::Response| -> Result<Vec<u8>> {
        wire.extend_from_slice(resp.status().as_str().as_bytes());
        for (k, v) in resp.headers() {
            wire.extend_from_slice(format!("\n{}: ", k.as_str()).as_bytes());
            wire.extend_from_slice(v.as_bytes());
        }
        let body = resp.bytes()?.to_vec();
        wire.push(b'\n');
        wire.extend_from_slice(&body);
        wire.push(b'\n');
        Ok(body)
    };

    let mut admin = Vec::new();
    let created: Value = serde_json::from_slice(&capture(
        &mut admin,
        http.post(format!("{base}/studies"))
            .json(&json!({"real_manifest": real, "synth_manifest": synth, "n_per_class": 10, "seed": 5}))
            .send()?,
    )?)?;
    let study_id = created["study_id"].as_str().context("no study id")?.to_string();

    let mut rater = Vec::new();
    let opened: Value = serde_json::from_slice(&capture(
        &mut rater,
        http.post(format!("{base}/studies/{study_id}/sessions"))
            .json(&json!({"rater_tag": "blind rater"}))
            .send()?,
    )?)?;
    let sid = opened["session_id"].as_str().context("no session")?.to_string();
    for i in 0..20 {
        let next: Value = serde_json::from_slice(&capture(
            &mut rater,
            http.get(format!("{base}/sessions/{sid}/next")).send()?,
        )?)?;
        let item = next["item_id"].as_str().context("no item")?.to_string();
        let image_url = next["image_url"].as_str().context("no image url")?;
        capture(&mut rater, http.get(format!("{base}{image_url}")).send()?)?;
        let answer = if i % 2 == 0 { "real" } else { "synthetic" };
        capture(
            &mut rater,
            http.post(format!("{base}/sessions/{sid}/responses"))
                .json(&json!({"item_id": item, "answer": answer}))
                .send()?,
        )?;
    }
    capture(&mut rater, http.get(format!("{base}/sessions/{sid}/next")).send()?)?;
    capture(
        &mut admin,
        http.post(format!("{base}/studies/{study_id}/close")).send()?,
    )?;
    capture(
        &mut admin,
        http.get(format!("{base}/studies/{study_id}/report")).send()?,
    )?;
    drop(server);

    let mut tokens: Vec<String> = ["real", "synth", "isic", "stylegan", "truth", "origin", "source", "_mel"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.push(images.path().to_string_lossy().to_lowercase());
    for m in [&real, &synth] {
        for r in load_manifest(m)?.records {
            tokens.push(r.id.to_lowercase());
        }
    }
    Ok((rater, tokens, admin))
}

fn service_suite() -> Result<String> {
    let cuts = durability()?;
    let (rater, tokens, admin) = wire_capture()?;
    let wire = String::from_utf8_lossy(&rater).to_lowercase();
    let leaks: Vec<&String> = tokens.iter().filter(|t| wire.contains(t.as_str())).collect();
    ensure!(leaks.is_empty(), "rater wire leaks {leaks:?}");
    // the same audit does flag the operator's post-close report
    let admin = String::from_utf8_lossy(&admin).to_lowercase();
    ensure!(
        tokens.iter().any(|t| admin.contains(t.as_str())),
        "audit found nothing in the report"
    );
    Ok(format!(
        "{cuts} crash points lose no acked response; {} rater bytes, 0 of {} tokens present",
        rater.len(),
        tokens.len()
    ))
}

/// Re-derives the hash from the documented byte layout.
fn layout_hash(order: &[(String, Origin)]) -> String {
    let mut h = Sha256::new();
    h.update(b"synth-eval/item-order/v1");
    h.update((order.len() as u64).to_le_bytes());
    for (id, truth) in order {
        h.update([u8::from(*truth == Origin::Synthetic)]);
        h.update((id.len() as u64).to_le_bytes());
        h.update(id.as_bytes());
    }
    format!("{:x}", h.finalize())
}

fn determinism() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let (svc, _) = StudyService::open(dir.path())?;
    let (real, synth) = study_manifests(100);
    let mut hashes: HashMap<String, usize> = HashMap::new();
    let mut last = None;
    for _ in 0..10 {
        let created = svc.create_study(&real, &synth, 100, 7)?;
        *hashes.entry(created.item_order_hash.clone()).or_default() += 1;
        last = Some(created);
    }
    ensure!(hashes.len() == 1, "{} distinct hashes over 10 runs", hashes.len());
    let created = last.context("no study")?;
    let study = svc.snapshot(&created.study_id)?.study;
    let order: Vec<(String, Origin)> = study.items.iter().map(|i| (i.source_id.clone(), i.truth)).collect();
    ensure!(
        layout_hash(&order) == created.item_order_hash,
        "hash does not follow the byte layout"
    );
    ensure!(
        created.item_order_hash == GOLDEN_ORDER_HASH_SEED_7,
        "hash {} differs from the pinned value",
        created.item_order_hash
    );
    let other = svc.create_study(&real, &synth, 100, 8)?;
    ensure!(
        other.item_order_hash != created.item_order_hash,
        "seed 8 reproduced seed 7"
    );
    Ok(format!("10 runs -> {}", &created.item_order_hash[..16]))
}
