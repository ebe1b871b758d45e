//! Rater response files: one rater's answers keyed by item id.
//!
//! ```json
//! {"rater_tag": "Dermatologist 1",
//!  "responses": [{"item_id": "3f9c...", "answer": "real"}, ...]}
//! ```
//!
//! The same file feeds `kappa` and `study import-session`.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use synth_eval_core::Origin;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub item_id: String,
    pub answer: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFile {
    pub rater_tag: String,
    pub responses: Vec<ResponseEntry>,
}

impl ResponseFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read", path.display()))?;
        let file: ResponseFile = serde_json::from_str(&text).map_err(|e| {
            anyhow::anyhow!(
                "{}: parse error at line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            )
        })?;
        let mut seen = HashSet::new();
        for (row, r) in file.responses.iter().enumerate() {
            if !seen.insert(r.item_id.as_str()) {
                bail!(
                    "{}: response {row}: item {:?} answered twice",
                    path.display(),
                    r.item_id
                );
            }
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).with_context(|| format!("{}: cannot write", path.display()))
    }
}

/// Pairs two raters' answers item by item, in the order of `a`.
pub fn pair_responses(a: &ResponseFile, b: &ResponseFile) -> Result<Vec<(Origin, Origin)>> {
    let b_answers: std::collections::HashMap<&str, Origin> =
        b.responses.iter().map(|r| (r.item_id.as_str(), r.answer)).collect();
    let only_a: Vec<&str> = a
        .responses
        .iter()
        .map(|r| r.item_id.as_str())
        .filter(|id| !b_answers.contains_key(id))
        .collect();
    let a_ids: HashSet<&str> = a.responses.iter().map(|r| r.item_id.as_str()).collect();
    let only_b: Vec<&str> = b
        .responses
        .iter()
        .map(|r| r.item_id.as_str())
        .filter(|id| !a_ids.contains(id))
        .collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        bail!(
            "item sets differ: {} only in {:?} (first: {:?}), {} only in {:?} (first: {:?})",
            only_a.len(),
            a.rater_tag,
            only_a.first(),
            only_b.len(),
            b.rater_tag,
            only_b.first()
        );
    }
    Ok(a.responses
        .iter()
        .map(|r| (r.answer, b_answers[r.item_id.as_str()]))
        .collect())
}
