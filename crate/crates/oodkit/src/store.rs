//! On-disk bundle format.
//!
//! A bundle is a directory holding `manifest.json` and one `.f32` file per
//! matrix. Matrix files are raw little-endian binary32, row-major, with no
//! header. The manifest is UTF-8 JSON with lexicographically sorted keys:
//!
//! ```json
//! {
//!   "format": "OODB",
//!   "id_labels": [0, 1, 0],
//!   "matrices": [
//!     { "cols": 2, "file": "id_images.f32", "role": "id_images", "rows": 3, "sha256": "..." },
//!     { "cols": 2, "dataset": "textures", "file": "ood_images_000.f32", "role": "ood_images", "rows": 4, "sha256": "..." }
//!   ],
//!   "metadata": { "backbone": "vit-b16" },
//!   "version": 1
//! }
//! ```
//!
//! Roles are `id_images`, `ood_images`, `id_prompts`, `ood_prompts`,
//! `logits_id` and `logits_ood`; the per-dataset roles carry a `dataset`
//! name. `id_labels` is `null` when the bundle has no labels. Matrix entries
//! are written in role order, datasets sorted by name, so writing the same
//! bundle twice gives identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use oodkit_core::embedding::{role, ShapeError};
use oodkit_core::{Bundle, EmbeddingMatrix, Logits, Violation};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &str = "OODB";
pub const FORMAT_VERSION: u64 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed manifest: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("not a bundle manifest: format is {0:?}, expected \"OODB\"")]
    BadMagic(String),
    #[error("unknown bundle format version {0} (this build reads version 1)")]
    UnknownVersion(u64),
    #[error("missing matrix file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: manifest declares {rows}x{cols} ({expected} bytes) but the file holds {actual} bytes")]
    ShapeMismatch { file: String, rows: usize, cols: usize, expected: u64, actual: u64 },
    #[error("{file}: {source}")]
    Shape { file: String, source: ShapeError },
    #[error("{file}: SHA-256 mismatch (manifest {expected}, file {actual})")]
    Checksum { file: String, expected: String, actual: String },
    #[error("inconsistent manifest: {0}")]
    Manifest(String),
    #[error("bundle violates {} invariant(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u64,
    pub matrices: Vec<MatrixEntry>,
    pub id_labels: Option<Vec<u32>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Matrices of a bundle in manifest order, with their file names.
fn layout(bundle: &Bundle) -> Vec<(&'static str, Option<&str>, String, &EmbeddingMatrix)> {
    let mut out = vec![(role::ID_IMAGES, None, "id_images.f32".to_string(), &bundle.id_images)];
    for (i, (name, m)) in bundle.ood_images.iter().enumerate() {
        out.push((role::OOD_IMAGES, Some(name.as_str()), format!("ood_images_{i:03}.f32"), m));
    }
    out.push((role::ID_PROMPTS, None, "id_prompts.f32".to_string(), &bundle.id_prompts));
    out.push((role::OOD_PROMPTS, None, "ood_prompts.f32".to_string(), &bundle.ood_prompts));
    if let Some(logits) = &bundle.logits {
        out.push((role::LOGITS_ID, None, "logits_id.f32".to_string(), &logits.id));
        for (i, (name, m)) in logits.ood.iter().enumerate() {
            out.push((role::LOGITS_OOD, Some(name.as_str()), format!("logits_ood_{i:03}.f32"), m));
        }
    }
    out
}

/// Manifest JSON text for a bundle whose matrix files hash as given.
fn manifest_text(manifest: &Manifest) -> String {
    // Going through Value sorts every object's keys.
    let value = serde_json::to_value(manifest).expect("manifest is always representable");
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text
}

/// Writes a valid bundle. Refuses bundles that fail validation.
pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<(), BundleError> {
    let violations = bundle.validate();
    if !violations.is_empty() {
        return Err(BundleError::Invalid(violations));
    }
    write_bundle_unvalidated(bundle, dir)
}

/// Writes any bundle, valid or not. Meant for building rejection fixtures.
pub fn write_bundle_unvalidated(bundle: &Bundle, dir: &Path) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut matrices = Vec::new();
    for (role, dataset, file, m) in layout(bundle) {
        let bytes = m.to_le_bytes();
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        matrices.push(MatrixEntry {
            role: role.to_string(),
            dataset: dataset.map(str::to_string),
            file,
            rows: m.rows(),
            cols: m.dim(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: MAGIC.to_string(),
        version: FORMAT_VERSION,
        matrices,
        id_labels: bundle.id_labels.clone(),
        metadata: bundle.metadata.clone(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest_text(&manifest)).map_err(io_err(&path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, BundleError> {
    let path = dir.join(MANIFEST);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(BundleError::MissingFile(path)),
        Err(e) => return Err(BundleError::Io { path, source: e }),
    };
    // Check the magic and version before the full schema so that a future
    // format with new fields still reports its version.
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|source| BundleError::Json { path: path.clone(), source })?;
    match raw.get("format") {
        Some(serde_json::Value::String(s)) if s == MAGIC => {}
        Some(serde_json::Value::String(s)) => return Err(BundleError::BadMagic(s.clone())),
        other => return Err(BundleError::BadMagic(other.map(|v| v.to_string()).unwrap_or_default())),
    }
    match raw.get("version").and_then(serde_json::Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(BundleError::UnknownVersion(v)),
        None => return Err(BundleError::Manifest("version must be a non-negative integer".into())),
    }
    serde_json::from_value(raw).map_err(|source| BundleError::Json { path, source })
}

fn read_matrix(dir: &Path, entry: &MatrixEntry) -> Result<EmbeddingMatrix, BundleError> {
    let path = dir.join(&entry.file);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(BundleError::MissingFile(path)),
        Err(e) => return Err(BundleError::Io { path, source: e }),
    };
    let expected = (entry.rows as u64).saturating_mul(entry.cols as u64).saturating_mul(4);
    if bytes.len() as u64 != expected {
        return Err(BundleError::ShapeMismatch {
            file: entry.file.clone(),
            rows: entry.rows,
            cols: entry.cols,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&entry.sha256) {
        return Err(BundleError::Checksum { file: entry.file.clone(), expected: entry.sha256.clone(), actual });
    }
    EmbeddingMatrix::from_le_bytes(entry.rows, entry.cols, &bytes)
        .map_err(|source| BundleError::Shape { file: entry.file.clone(), source })
}

/// Reads a bundle and rejects it unless every invariant holds.
pub fn read_bundle(dir: &Path) -> Result<Bundle, BundleError> {
    let bundle = read_bundle_unvalidated(dir)?;
    let violations = bundle.validate();
    if violations.is_empty() {
        Ok(bundle)
    } else {
        Err(BundleError::Invalid(violations))
    }
}

/// Reads the files and checks shapes and checksums, but not bundle
/// invariants. `validate` uses this to list every violation.
pub fn read_bundle_unvalidated(dir: &Path) -> Result<Bundle, BundleError> {
    let manifest = read_manifest(dir)?;
    let mut single: BTreeMap<&str, EmbeddingMatrix> = BTreeMap::new();
    let mut ood_images = BTreeMap::new();
    let mut logits_ood = BTreeMap::new();
    let mut files = std::collections::BTreeSet::new();
    for entry in &manifest.matrices {
        if !files.insert(entry.file.as_str()) {
            return Err(BundleError::Manifest(format!("file {} listed twice", entry.file)));
        }
        if entry.file.contains(['/', '\\']) || entry.file == ".." {
            return Err(BundleError::Manifest(format!("file name {:?} must not contain a path", entry.file)));
        }
        let m = read_matrix(dir, entry)?;
        let per_dataset = |map: &mut BTreeMap<String, EmbeddingMatrix>| match &entry.dataset {
            Some(name) if map.contains_key(name) => {
                Err(BundleError::Manifest(format!("{} dataset {name:?} listed twice", entry.role)))
            }
            Some(name) => {
                map.insert(name.clone(), m.clone());
                Ok(())
            }
            None => Err(BundleError::Manifest(format!("{} entry needs a dataset name", entry.role))),
        };
        match entry.role.as_str() {
            role::OOD_IMAGES => per_dataset(&mut ood_images)?,
            role::LOGITS_OOD => per_dataset(&mut logits_ood)?,
            r @ (role::ID_IMAGES | role::ID_PROMPTS | role::OOD_PROMPTS | role::LOGITS_ID) => {
                if entry.dataset.is_some() {
                    return Err(BundleError::Manifest(format!("{r} entry must not name a dataset")));
                }
                if single.insert(r, m).is_some() {
                    return Err(BundleError::Manifest(format!("{r} listed twice")));
                }
            }
            other => return Err(BundleError::Manifest(format!("unknown matrix role {other:?}"))),
        }
    }
    let mut take = |r: &str| single.remove(r).ok_or_else(|| BundleError::Manifest(format!("no {r} matrix")));
    let id_images = take(role::ID_IMAGES)?;
    let id_prompts = take(role::ID_PROMPTS)?;
    let ood_prompts = take(role::OOD_PROMPTS)?;
    let logits = match single.remove(role::LOGITS_ID) {
        Some(id) => Some(Logits { id, ood: logits_ood }),
        None if logits_ood.is_empty() => None,
        None => return Err(BundleError::Manifest("logits_ood without logits_id".into())),
    };
    let mut bundle = Bundle::new(id_images, id_prompts, ood_prompts);
    bundle.ood_images = ood_images;
    bundle.id_labels = manifest.id_labels;
    bundle.logits = logits;
    bundle.metadata = manifest.metadata;
    Ok(bundle)
}
