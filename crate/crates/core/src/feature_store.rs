//! Dataset manifests, the FVEC feature-matrix file format and the external
//! extractor adapter.
//!
//! FVEC layout (all integers little-endian):
//!
//! ```text
//! magic "FVEC" | version u16 = 1 | reserved u16 = 0 | n u32 | dim u32
//! | n ids, each a u16 byte length followed by UTF-8 bytes
//! | n * dim IEEE-754 binary32 values, row-major
//! ```
//!
//! Anything else (wrong magic, unknown version, non-zero reserved field,
//! short or trailing bytes) is rejected.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FVEC_MAGIC: &[u8; 4] = b"FVEC";
pub const FVEC_VERSION: u16 = 1;
/// Size of the fixed part of the header (magic, version, reserved, n, dim).
pub const FVEC_FIXED_HEADER: usize = 16;

#[derive(Debug, Error)]
pub enum FeatureStoreError {
    #[error("{path}: I/O error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: manifest parse error at line {line}, column {column}: {message}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: record {index} (id {id:?}): {rule}")]
    ManifestInvalid {
        path: PathBuf,
        index: usize,
        id: String,
        rule: String,
    },
    #[error("{path}: bad magic at offset 0: expected \"FVEC\"")]
    BadMagic { path: PathBuf },
    #[error("{path}: offset {offset}: {rule}")]
    Format { path: PathBuf, offset: usize, rule: String },
    #[error("{path}: truncated payload at offset {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: non-finite value at row {row}, column {column}")]
    NonFinite { path: PathBuf, row: usize, column: usize },
    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),
    #[error("extractor adapter is not configured")]
    AdapterNotConfigured,
    #[error("cannot extract features for an empty manifest")]
    EmptyManifest,
    #[error("extractor adapter failed with exit code {code:?}: {stderr}")]
    AdapterFailed { code: Option<i32>, stderr: String },
    #[error("extractor produced {found} rows for a manifest of {expected} records")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("extractor row {row} has id {found:?}, expected {expected:?}")]
    IdOrderMismatch {
        row: usize,
        expected: String,
        found: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FeatureStoreError + '_ {
    move |source| FeatureStoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Melanoma,
    Benign,
}

/// Whether an image is a real photograph or generator output. Also used as
/// the answer alphabet of the rating study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Synthetic,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub class_label: ClassLabel,
    pub origin: Origin,
    #[serde(default)]
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub created_at: DateTime<Utc>,
    pub records: Vec<ImageRecord>,
    /// Directory the manifest was loaded from; relative record paths resolve
    /// against it. Not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn new(name: impl Into<String>, created_at: DateTime<Utc>, records: Vec<ImageRecord>) -> Self {
        Manifest {
            name: name.into(),
            created_at,
            records,
            base_dir: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Path of a record with `base_dir` applied.
    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        match &self.base_dir {
            Some(dir) => dir.join(&record.path),
            None => PathBuf::from(&record.path),
        }
    }

    /// Returns `(index, id, rule)` for the first record violating an invariant.
    pub fn validate(&self) -> Result<(), (usize, String, String)> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for (index, record) in self.records.iter().enumerate() {
            if record.id.is_empty() {
                return Err((index, record.id.clone(), "id must be non-empty".into()));
            }
            if record.path.is_empty() {
                return Err((index, record.id.clone(), "path must be non-empty".into()));
            }
            if !seen.insert(record.id.as_str()) {
                return Err((index, record.id.clone(), format!("duplicate id {:?}", record.id)));
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest, FeatureStoreError> {
    let mut manifest: Manifest = serde_json::from_str(text).map_err(|e| FeatureStoreError::ManifestParse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    manifest
        .validate()
        .map_err(|(index, id, rule)| FeatureStoreError::ManifestInvalid {
            path: path.to_path_buf(),
            index,
            id,
            rule,
        })?;
    manifest.base_dir = path.parent().map(Path::to_path_buf);
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, FeatureStoreError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text, path)
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<(), FeatureStoreError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// A named `n x dim` matrix of per-image embeddings, stored row-major in
/// binary32 exactly as it appears on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub name: String,
    pub dim: usize,
    pub ids: Vec<String>,
    data: Vec<f32>,
    pub extractor_tag: String,
}

impl FeatureSet {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        ids: Vec<String>,
        data: Vec<f32>,
        extractor_tag: impl Into<String>,
    ) -> Result<Self, FeatureStoreError> {
        if dim == 0 {
            return Err(FeatureStoreError::InvalidFeatureSet("dim must be positive".into()));
        }
        if ids.is_empty() {
            return Err(FeatureStoreError::InvalidFeatureSet(
                "at least one row is required".into(),
            ));
        }
        if data.len() != ids.len() * dim {
            return Err(FeatureStoreError::InvalidFeatureSet(format!(
                "{} ids x {} dims needs {} values, got {}",
                ids.len(),
                dim,
                ids.len() * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureStoreError::InvalidFeatureSet(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(FeatureSet {
            name: name.into(),
            dim,
            ids,
            data,
            extractor_tag: extractor_tag.into(),
        })
    }

    /// Builds a feature set from rows, with ids `"0"`, `"1"`, ...
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self, FeatureStoreError> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(FeatureStoreError::InvalidFeatureSet("ragged rows".into()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        let data = rows.iter().flatten().copied().collect();
        FeatureSet::new(name, dim, ids, data, "")
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Byte size of the encoded FVEC file.
    pub fn encoded_len(&self) -> usize {
        FVEC_FIXED_HEADER + self.ids.iter().map(|id| 2 + id.len()).sum::<usize>() + self.data.len() * 4
    }

    pub fn encode(&self) -> Result<Vec<u8>, FeatureStoreError> {
        let n = u32::try_from(self.n())
            .map_err(|_| FeatureStoreError::InvalidFeatureSet("row count exceeds u32".into()))?;
        let dim =
            u32::try_from(self.dim).map_err(|_| FeatureStoreError::InvalidFeatureSet("dim exceeds u32".into()))?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(FVEC_MAGIC);
        out.extend_from_slice(&FVEC_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        for id in &self.ids {
            let len = u16::try_from(id.len())
                .map_err(|_| FeatureStoreError::InvalidFeatureSet(format!("id {id:?} longer than 65535 bytes")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Decodes an FVEC byte buffer. `path` is only used for error messages;
    /// the name is taken from its file stem.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, FeatureStoreError> {
        let mut cur = Cursor { bytes, pos: 0, path };
        if bytes.len() < 4 || &bytes[..4] != FVEC_MAGIC {
            return Err(FeatureStoreError::BadMagic {
                path: path.to_path_buf(),
            });
        }
        cur.pos = 4;
        let version = cur.u16()?;
        if version != FVEC_VERSION {
            return Err(cur.format(4, format!("unsupported version {version}, expected 1")));
        }
        let reserved = cur.u16()?;
        if reserved != 0 {
            return Err(cur.format(6, format!("reserved field must be 0, found {reserved}")));
        }
        let n = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        if n == 0 {
            return Err(cur.format(8, "row count n must be at least 1".into()));
        }
        if dim == 0 {
            return Err(cur.format(12, "dim must be positive".into()));
        }
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = cur.u16()? as usize;
            let at = cur.pos;
            let raw = cur.take(len)?;
            let id = std::str::from_utf8(raw).map_err(|e| cur.format(at, format!("id is not valid UTF-8: {e}")))?;
            ids.push(id.to_owned());
        }
        let payload_len = n
            .checked_mul(dim)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| cur.format(8, "n * dim overflows".into()))?;
        let payload_at = cur.pos;
        let payload = cur.take(payload_len)?;
        if cur.pos != bytes.len() {
            return Err(cur.format(
                cur.pos,
                format!("{} trailing bytes after payload", bytes.len() - cur.pos),
            ));
        }
        let mut data = Vec::with_capacity(n * dim);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(FeatureStoreError::NonFinite {
                    path: path.to_path_buf(),
                    row: i / dim,
                    column: i % dim,
                });
            }
            data.push(v);
        }
        debug_assert_eq!(payload_at + payload_len, bytes.len());
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(FeatureSet {
            name,
            dim,
            ids,
            data,
            extractor_tag: String::new(),
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], FeatureStoreError> {
        let rest = self.bytes.len() - self.pos;
        if rest < len {
            return Err(FeatureStoreError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.pos,
                expected: len,
                found: rest,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, FeatureStoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FeatureStoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn format(&self, offset: usize, rule: String) -> FeatureStoreError {
        FeatureStoreError::Format {
            path: self.path.to_path_buf(),
            offset,
            rule,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureMeta {
    name: String,
    extractor_tag: String,
}

/// Location of the optional sidecar holding the name and extractor tag,
/// which the binary format has no room for.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn read_featureset(path: impl AsRef<Path>) -> Result<FeatureSet, FeatureStoreError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut fs = FeatureSet::decode(&bytes, path)?;
    let meta = meta_path(path);
    if let Ok(text) = fs::read_to_string(&meta) {
        let meta: FeatureMeta = serde_json::from_str(&text).map_err(|e| FeatureStoreError::Format {
            path: meta.clone(),
            offset: 0,
            rule: format!("malformed metadata sidecar: {e}"),
        })?;
        fs.name = meta.name;
        fs.extractor_tag = meta.extractor_tag;
    }
    Ok(fs)
}

/// Writes the FVEC file and its metadata sidecar.
pub fn write_featureset(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<(), FeatureStoreError> {
    let path = path.as_ref();
    let bytes = fs.encode()?;
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bytes).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))?;
    let meta = FeatureMeta {
        name: fs.name.clone(),
        extractor_tag: fs.extractor_tag.clone(),
    };
    let meta_file = meta_path(path);
    fs::write(&meta_file, serde_json::to_vec(&meta).expect("meta serializes")).map_err(io_err(&meta_file))
}

/// Command template for an external feature extractor. `{list}` and `{out}`
/// are substituted inside whitespace-separated arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterCommand {
    args: Vec<String>,
}

impl AdapterCommand {
    pub fn parse(template: &str) -> Result<Self, FeatureStoreError> {
        let args: Vec<String> = template.split_whitespace().map(str::to_owned).collect();
        if args.is_empty() {
            return Err(FeatureStoreError::AdapterNotConfigured);
        }
        Ok(AdapterCommand { args })
    }

    pub fn template(&self) -> String {
        self.args.join(" ")
    }

    fn render(&self, list: &Path, out: &Path) -> Vec<String> {
        let list = list.to_string_lossy();
        let out = out.to_string_lossy();
        self.args
            .iter()
            .map(|a| a.replace("{list}", &list).replace("{out}", &out))
            .collect()
    }
}

/// Runs the adapter over every manifest record and validates its output.
///
/// The adapter receives a newline-separated list of image paths in manifest
/// order and must write one FVEC row per path, in the same order. Row ids may
/// be either the record ids or the listed paths; the returned set carries the
/// record ids.
pub fn run_extractor(
    manifest: &Manifest,
    adapter: &AdapterCommand,
    out: impl AsRef<Path>,
) -> Result<FeatureSet, FeatureStoreError> {
    let out = out.as_ref();
    if manifest.is_empty() {
        return Err(FeatureStoreError::EmptyManifest);
    }
    let paths: Vec<String> = manifest
        .records
        .iter()
        .map(|r| manifest.resolve_path(r).to_string_lossy().into_owned())
        .collect();
    let mut list_name = out.as_os_str().to_owned();
    list_name.push(".list.txt");
    let list = PathBuf::from(list_name);
    fs::write(&list, paths.join("\n") + "\n").map_err(io_err(&list))?;

    let argv = adapter.render(&list, out);
    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .output()
        .map_err(|source| FeatureStoreError::Io {
            path: PathBuf::from(&argv[0]),
            source,
        })?;
    let _ = fs::remove_file(&list);
    if !output.status.success() {
        return Err(FeatureStoreError::AdapterFailed {
            code: output.status.code(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_owned(),
        });
    }

    let mut features = FeatureSet::decode(&fs::read(out).map_err(io_err(out))?, out)?;
    if features.n() != manifest.len() {
        return Err(FeatureStoreError::RowCountMismatch {
            expected: manifest.len(),
            found: features.n(),
        });
    }
    for (row, (record, path)) in manifest.records.iter().zip(&paths).enumerate() {
        let found = &features.ids[row];
        if found != &record.id && found != path && found != &record.path {
            return Err(FeatureStoreError::IdOrderMismatch {
                row,
                expected: record.id.clone(),
                found: found.clone(),
            });
        }
    }
    features.ids = manifest.records.iter().map(|r| r.id.clone()).collect();
    features.name = manifest.name.clone();
    features.extractor_tag = adapter.template();
    write_featureset(&features, out)?;
    Ok(features)
}
