//! The reference inputs shipped under `fixtures/`. Regenerate with
//! `cargo run -p synth-eval-cli --example write_fixtures -- fixtures`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use synth_eval_core::classifier_eval::PredictionSet;
use synth_eval_core::feature_store::save_manifest;
use synth_eval_core::fixtures::{
    augmentation_manifest, augmentation_predictions, frozen_classifier, kappa_joint_table, write_study_fixture,
    AUGMENTED_TARGETS, REAL_ONLY_TARGETS,
};
use synth_eval_core::{write_featureset, FeatureSet};

use crate::responses::{ResponseEntry, ResponseFile};

/// Images per class in the bundled study fixture.
pub const STUDY_IMAGES_PER_CLASS: usize = 100;

fn features(dir: &Path, name: &str, rows: &[&[f32]]) -> Result<PathBuf> {
    let dim = rows[0].len();
    let ids = (0..rows.len()).map(|i| format!("{name}_{i}")).collect();
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let fs = FeatureSet::new(name, dim, ids, data, "fixture")?;
    let path = dir.join(format!("{name}.fvec"));
    write_featureset(&fs, &path)?;
    Ok(path)
}

fn predictions(path: &Path, set: &PredictionSet) -> Result<()> {
    let text = serde_json::to_string_pretty(&set.to_file())? + "\n";
    std::fs::write(path, text).with_context(|| format!("{}: cannot write", path.display()))
}

/// 3 x 3 grid around the origin; its medoid is the centre point.
pub fn mode_collapse_real() -> Vec<[f32; 2]> {
    let mut rows = Vec::with_capacity(9);
    for y in [-1.0, 0.0, 1.0] {
        for x in [-1.0, 0.0, 1.0] {
            rows.push([x, y]);
        }
    }
    rows
}

/// Writes every bundled fixture under `root`.
pub fn write_all(root: &Path) -> Result<()> {
    let dir = root.join("features");
    std::fs::create_dir_all(&dir)?;
    features(&dir, "fid_1d_real", &[&[-1.0], &[0.0], &[1.0]])?;
    features(&dir, "fid_1d_shift", &[&[1.0], &[2.0], &[3.0]])?;
    features(&dir, "fid_1d_scale", &[&[-2.0], &[0.0], &[2.0]])?;
    features(&dir, "fmd_three_point", &[&[0.0, 0.0], &[1.0, 0.0], &[4.0, 0.0]])?;
    let grid = mode_collapse_real();
    let grid_rows: Vec<&[f32]> = grid.iter().map(|r| r.as_slice()).collect();
    features(&dir, "mode_collapse_real", &grid_rows)?;
    let collapsed = vec![&grid[4][..]; grid.len()];
    features(&dir, "mode_collapse_gen", &collapsed)?;

    let dir = root.join("downstream");
    std::fs::create_dir_all(&dir)?;
    let frozen = frozen_classifier();
    save_manifest(&frozen.real_manifest, dir.join("real_set_manifest.json"))?;
    save_manifest(&frozen.synthetic_manifest, dir.join("synthetic_set_manifest.json"))?;
    predictions(&dir.join("real_set_predictions.json"), &frozen.real_predictions)?;
    predictions(
        &dir.join("synthetic_set_predictions.json"),
        &frozen.synthetic_predictions,
    )?;

    let dir = root.join("augmentation");
    std::fs::create_dir_all(&dir)?;
    save_manifest(&augmentation_manifest(), dir.join("test_manifest.json"))?;
    predictions(
        &dir.join("real_only_predictions.json"),
        &augmentation_predictions("efficientnet-b0-real-only", REAL_ONLY_TARGETS),
    )?;
    predictions(
        &dir.join("real_plus_synthetic_predictions.json"),
        &augmentation_predictions("efficientnet-b0-real-plus-synthetic", AUGMENTED_TARGETS),
    )?;

    let dir = root.join("kappa");
    std::fs::create_dir_all(&dir)?;
    let table = kappa_joint_table();
    for (name, tag, pick) in [("rater_a.json", "Rater A", 0usize), ("rater_b.json", "Rater B", 1usize)] {
        let file = ResponseFile {
            rater_tag: tag.to_string(),
            responses: table
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| ResponseEntry {
                    item_id: format!("item_{i:03}"),
                    answer: if pick == 0 { a } else { b },
                })
                .collect(),
        };
        file.save(&dir.join(name))?;
    }

    write_study_fixture(&root.join("study"), STUDY_IMAGES_PER_CLASS)?;
    Ok(())
}

/// `fixtures/` at the workspace root.
pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
