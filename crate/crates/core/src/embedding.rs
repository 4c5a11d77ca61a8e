//! In-memory model for embedding matrices and bundles.
//!
//! A [`Bundle`] packages everything one evaluation needs: ID image
//! embeddings, one embedding matrix per OOD dataset, the K ID prompt
//! embeddings and M OOD prompt embeddings, optional ID labels, optional
//! classifier logits for the single-modal baselines, and free-form metadata.
//!
//! Embeddings are stored exactly as produced (not L2-normalized); scoring
//! normalizes at use. Invariants are checked by [`Bundle::validate`], which
//! reports every violation instead of stopping at the first.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Row-major `rows x dim` table of binary32 values.
///
/// Construction only checks the shape. Finiteness and the no-zero-row rule
/// are bundle invariants, checked by [`Bundle::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("expected {expected} values for the declared shape, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("row {row} has length {actual}, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("byte length {0} is not a multiple of 4")]
    ByteLength(usize),
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self, ShapeError> {
        if dim == 0 {
            return Err(ShapeError::ZeroDim);
        }
        let expected = rows
            .checked_mul(dim)
            .ok_or(ShapeError::Length { expected: usize::MAX, actual: values.len() })?;
        if values.len() != expected {
            return Err(ShapeError::Length { expected, actual: values.len() });
        }
        Ok(Self { rows, dim, values })
    }

    /// An `0 x dim` matrix, e.g. an empty OOD prompt set (M = 0).
    pub fn empty(dim: usize) -> Result<Self, ShapeError> {
        Self::new(0, dim, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self, ShapeError> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(ShapeError::RaggedRow { row: i, expected: dim, actual: r.len() });
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    /// Decodes little-endian binary32 words.
    pub fn from_le_bytes(rows: usize, dim: usize, bytes: &[u8]) -> Result<Self, ShapeError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(ShapeError::ByteLength(bytes.len()));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(rows, dim, values)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Rows `order[0], order[1], ...` as a new matrix.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(order.len() * self.dim);
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        Self { rows: order.len(), dim: self.dim, values }
    }

    /// Vertical concatenation. Both matrices must share `dim`.
    pub fn stack(&self, other: &Self) -> Result<Self, ShapeError> {
        if self.dim != other.dim {
            return Err(ShapeError::RaggedRow { row: self.rows, expected: self.dim, actual: other.dim });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(self.rows + other.rows, self.dim, values)
    }

    /// Bitwise equality, which unlike `==` treats NaN payloads and signed
    /// zeros as distinct values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.dim == other.dim
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn check_values(&self, matrix: &str, zero_rows_allowed: bool, out: &mut Vec<Violation>) {
        for (r, row) in self.iter_rows().enumerate() {
            if let Some(col) = row.iter().position(|v| !v.is_finite()) {
                out.push(Violation::at(matrix, r, ViolationKind::NonFinite { col }));
            } else if !zero_rows_allowed && row.iter().all(|&v| v == 0.0) {
                out.push(Violation::at(matrix, r, ViolationKind::ZeroRow));
            }
        }
    }
}

/// Classifier logits for the single-modal baseline rules, one matrix per
/// population with K columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub id: EmbeddingMatrix,
    pub ood: BTreeMap<String, EmbeddingMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub id_images: EmbeddingMatrix,
    /// OOD image embeddings keyed by dataset name.
    pub ood_images: BTreeMap<String, EmbeddingMatrix>,
    /// K ID prompt embeddings, one per ID class.
    pub id_prompts: EmbeddingMatrix,
    /// M OOD prompt embeddings; may have zero rows.
    pub ood_prompts: EmbeddingMatrix,
    /// Class index in `[0, K)` for each ID image.
    pub id_labels: Option<Vec<u32>>,
    pub logits: Option<Logits>,
    pub metadata: BTreeMap<String, String>,
}

/// Matrix role names used in violations and in the on-disk manifest.
pub mod role {
    pub const ID_IMAGES: &str = "id_images";
    pub const OOD_IMAGES: &str = "ood_images";
    pub const ID_PROMPTS: &str = "id_prompts";
    pub const OOD_PROMPTS: &str = "ood_prompts";
    pub const ID_LABELS: &str = "id_labels";
    pub const LOGITS_ID: &str = "logits_id";
    pub const LOGITS_OOD: &str = "logits_ood";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ViolationKind {
    NonFinite { col: usize },
    ZeroRow,
    EmptyMatrix,
    DimMismatch { expected: usize, actual: usize },
    LabelOutOfRange { label: u32, classes: usize },
    LabelCount { expected: usize, actual: usize },
    LogitsWidth { expected: usize, actual: usize },
    LogitsRows { expected: usize, actual: usize },
    LogitsPopulation,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonFinite { col } => write!(f, "non-finite value at column {col}"),
            Self::ZeroRow => f.write_str("all-zero row"),
            Self::EmptyMatrix => f.write_str("matrix has no rows"),
            Self::DimMismatch { expected, actual } => {
                write!(f, "dimension mismatch: expected {expected}, found {actual}")
            }
            Self::LabelOutOfRange { label, classes } => {
                write!(f, "label out of range: {label} not in [0, {classes})")
            }
            Self::LabelCount { expected, actual } => {
                write!(f, "label count mismatch: expected {expected}, found {actual}")
            }
            Self::LogitsWidth { expected, actual } => {
                write!(f, "logits width mismatch: expected K = {expected}, found {actual}")
            }
            Self::LogitsRows { expected, actual } => {
                write!(f, "logits row count mismatch: expected {expected}, found {actual}")
            }
            Self::LogitsPopulation => {
                f.write_str("logits population set differs from the image populations")
            }
        }
    }
}

/// One broken invariant: which matrix, which row (if row-specific), which rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub matrix: String,
    pub row: Option<usize>,
    pub kind: ViolationKind,
}

impl Violation {
    fn whole(matrix: &str, kind: ViolationKind) -> Self {
        Self { matrix: matrix.to_string(), row: None, kind }
    }

    fn at(matrix: &str, row: usize, kind: ViolationKind) -> Self {
        Self { matrix: matrix.to_string(), row: Some(row), kind }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{} row {}: {}", self.matrix, r, self.kind),
            None => write!(f, "{}: {}", self.matrix, self.kind),
        }
    }
}

/// Qualified matrix name for an OOD dataset, e.g. `ood_images[inaturalist]`.
pub fn qualified(role: &str, dataset: &str) -> String {
    format!("{role}[{dataset}]")
}

impl Bundle {
    /// Bundle with no OOD datasets, no labels, no logits and no metadata.
    pub fn new(id_images: EmbeddingMatrix, id_prompts: EmbeddingMatrix, ood_prompts: EmbeddingMatrix) -> Self {
        Self {
            id_images,
            ood_images: BTreeMap::new(),
            id_prompts,
            ood_prompts,
            id_labels: None,
            logits: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Number of ID prompts.
    pub fn k(&self) -> usize {
        self.id_prompts.rows()
    }

    /// Number of OOD prompts.
    pub fn m(&self) -> usize {
        self.ood_prompts.rows()
    }

    pub fn dim(&self) -> usize {
        self.id_images.dim()
    }

    /// Returns every invariant violation; empty iff the bundle is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let dim = self.id_images.dim();
        let check = |name: &str, m: &EmbeddingMatrix, may_be_empty: bool, out: &mut Vec<Violation>| {
            if m.dim() != dim {
                out.push(Violation::whole(name, ViolationKind::DimMismatch { expected: dim, actual: m.dim() }));
            }
            if !may_be_empty && m.is_empty() {
                out.push(Violation::whole(name, ViolationKind::EmptyMatrix));
            }
            m.check_values(name, false, out);
        };

        check(role::ID_IMAGES, &self.id_images, false, &mut out);
        for (name, m) in &self.ood_images {
            check(&qualified(role::OOD_IMAGES, name), m, false, &mut out);
        }
        check(role::ID_PROMPTS, &self.id_prompts, false, &mut out);
        check(role::OOD_PROMPTS, &self.ood_prompts, true, &mut out);

        let k = self.k();
        if let Some(labels) = &self.id_labels {
            if labels.len() != self.id_images.rows() {
                out.push(Violation::whole(
                    role::ID_LABELS,
                    ViolationKind::LabelCount { expected: self.id_images.rows(), actual: labels.len() },
                ));
            }
            for (i, &label) in labels.iter().enumerate() {
                if label as usize >= k {
                    out.push(Violation::at(role::ID_LABELS, i, ViolationKind::LabelOutOfRange { label, classes: k }));
                }
            }
        }

        if let Some(logits) = &self.logits {
            let mut check_logits = |name: &str, m: &EmbeddingMatrix, rows: usize| {
                if m.dim() != k {
                    out.push(Violation::whole(name, ViolationKind::LogitsWidth { expected: k, actual: m.dim() }));
                }
                if m.rows() != rows {
                    out.push(Violation::whole(name, ViolationKind::LogitsRows { expected: rows, actual: m.rows() }));
                }
                // An all-zero logit vector is a legitimate classifier output.
                m.check_values(name, true, &mut out);
            };
            check_logits(role::LOGITS_ID, &logits.id, self.id_images.rows());
            for (name, m) in &logits.ood {
                let rows = self.ood_images.get(name).map(|x| x.rows()).unwrap_or(m.rows());
                check_logits(&qualified(role::LOGITS_OOD, name), m, rows);
            }
            if !logits.ood.keys().eq(self.ood_images.keys()) {
                out.push(Violation::whole(role::LOGITS_OOD, ViolationKind::LogitsPopulation));
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// SHA-256 over a canonical encoding of every matrix, label and metadata
    /// entry. Two bundles with the same digest have bit-identical contents.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"OODB\x01");
        let put_str = |h: &mut Sha256, s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        let put_matrix = |h: &mut Sha256, m: &EmbeddingMatrix| {
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.dim() as u64).to_le_bytes());
            h.update(m.to_le_bytes());
        };
        put_str(&mut h, role::ID_IMAGES);
        put_matrix(&mut h, &self.id_images);
        for (name, m) in &self.ood_images {
            put_str(&mut h, role::OOD_IMAGES);
            put_str(&mut h, name);
            put_matrix(&mut h, m);
        }
        put_str(&mut h, role::ID_PROMPTS);
        put_matrix(&mut h, &self.id_prompts);
        put_str(&mut h, role::OOD_PROMPTS);
        put_matrix(&mut h, &self.ood_prompts);
        if let Some(labels) = &self.id_labels {
            put_str(&mut h, role::ID_LABELS);
            h.update((labels.len() as u64).to_le_bytes());
            for l in labels {
                h.update(l.to_le_bytes());
            }
        }
        if let Some(logits) = &self.logits {
            put_str(&mut h, role::LOGITS_ID);
            put_matrix(&mut h, &logits.id);
            for (name, m) in &logits.ood {
                put_str(&mut h, role::LOGITS_OOD);
                put_str(&mut h, name);
                put_matrix(&mut h, m);
            }
        }
        for (k, v) in &self.metadata {
            put_str(&mut h, k);
            put_str(&mut h, v);
        }
        h.finalize().into()
    }

    pub fn content_digest_hex(&self) -> String {
        crate::numeric::hex(&self.content_digest())
    }

    /// True when both bundles hold bit-identical image matrices (ID and every
    /// OOD dataset).
    pub fn same_images(&self, other: &Self) -> bool {
        self.id_images.bit_eq(&other.id_images)
            && self.ood_images.len() == other.ood_images.len()
            && self
                .ood_images
                .iter()
                .zip(&other.ood_images)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }
}
