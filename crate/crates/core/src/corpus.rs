//! Embedding corpora: a dense row-major matrix plus per-row metadata.
//!
//! A corpus on disk is two files sharing a stem:
//!
//! - `<name>.json`: UTF-8 manifest `{format_version, dim, count, items}`.
//! - `<name>.f32`: `"EBPC"`, `u16` version, `u32` dim, `u64` count, then
//!   `count * dim` little-endian `f32` values in row-major order. Nothing else.
//!
//! Vectors are stored single precision; every computation on them widens to
//! `f64`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::association::{AttributeSetPair, PairKind};

pub const MATRIX_MAGIC: &[u8; 4] = b"EBPC";
pub const FORMAT_VERSION: u16 = 1;
/// magic + version + dim + count
pub const MATRIX_HEADER_LEN: usize = 4 + 2 + 4 + 8;

/// Rows whose Euclidean norm is at or below this are rejected.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("matrix header does not start with EBPC magic")]
    BadMagic,
    #[error("unsupported matrix format version {0}")]
    UnsupportedVersion(u16),
    #[error("header mismatch on {field}: manifest says {manifest}, matrix says {matrix}")]
    HeaderMismatch {
        field: &'static str,
        manifest: u64,
        matrix: u64,
    },
    #[error("matrix truncated: expected {expected} bytes, found {actual}")]
    TruncatedMatrix { expected: u64, actual: u64 },
    #[error("matrix has {0} trailing bytes after the last row")]
    TrailingBytes(u64),
    #[error("row {row} has a non-finite value")]
    NonFiniteValue { row: usize },
    #[error("row {row} has zero norm")]
    ZeroNormVector { row: usize },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("not enough items: need {needed}, have {available}")]
    InsufficientItems { needed: usize, available: usize },
    #[error("row {row} has no valence rating")]
    MissingValence { row: usize },
    #[error("row index {row} out of range for corpus of {count} rows")]
    RowOutOfRange { row: usize, count: usize },
    #[error("row {row} appears twice in subset")]
    DuplicateRow { row: usize },
    #[error("cannot concatenate corpora of dimension {0} and {1}")]
    DimMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Image => Modality::Text,
            Modality::Text => Modality::Image,
        }
    }
}

/// The six intersectional race-by-gender groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    AsianMen,
    AsianWomen,
    BlackMen,
    BlackWomen,
    WhiteMen,
    WhiteWomen,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown group label {0:?}")]
pub struct UnknownGroup(pub String);

impl Group {
    pub const ALL: [Group; 6] = [
        Group::AsianMen,
        Group::AsianWomen,
        Group::BlackMen,
        Group::BlackWomen,
        Group::WhiteMen,
        Group::WhiteWomen,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::AsianMen => "AsianMen",
            Group::AsianWomen => "AsianWomen",
            Group::BlackMen => "BlackMen",
            Group::BlackWomen => "BlackWomen",
            Group::WhiteMen => "WhiteMen",
            Group::WhiteWomen => "WhiteWomen",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = UnknownGroup;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| UnknownGroup(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemMeta {
    pub id: String,
    pub row: usize,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    /// Ground-truth rating normalised to `[0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u8>,
    pub source: String,
}

/// Largest template id accepted in manifests.
pub const MAX_TEMPLATE_ID: u8 = 5;

/// Maps a 1 to 7 rating scale (as used by OASIS) onto `[0, 1]`.
pub fn normalize_seven_point(rating: f64) -> f64 {
    (rating - 1.0) / 6.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    dim: usize,
    count: usize,
    items: Vec<ItemMeta>,
}

/// An immutable, validated embedding corpus.
#[derive(Debug, Clone)]
pub struct EmbeddingCorpus {
    dim: usize,
    matrix: Vec<f32>,
    /// `items[r].row == r`
    items: Vec<ItemMeta>,
    norms: Vec<f64>,
    by_id: HashMap<String, usize>,
}

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub(crate) fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

impl EmbeddingCorpus {
    /// Builds and validates a corpus from an in-memory row-major matrix.
    ///
    /// `items` may arrive in any order; their `row` fields must form a
    /// permutation of `0..count`.
    pub fn from_parts(dim: usize, matrix: Vec<f32>, mut items: Vec<ItemMeta>) -> Result<Self> {
        if dim == 0 {
            return Err(CorpusError::MalformedManifest(
                "dim must be positive".into(),
            ));
        }
        let count = items.len();
        if count == 0 {
            return Err(CorpusError::MalformedManifest(
                "count must be positive".into(),
            ));
        }
        let expected = (count as u64) * (dim as u64);
        if matrix.len() as u64 != expected {
            return Err(CorpusError::TruncatedMatrix {
                expected: expected * 4,
                actual: matrix.len() as u64 * 4,
            });
        }

        let mut seen_row = vec![false; count];
        for item in &items {
            if item.row >= count {
                return Err(CorpusError::MalformedManifest(format!(
                    "item {:?} has row {} but count is {}",
                    item.id, item.row, count
                )));
            }
            if std::mem::replace(&mut seen_row[item.row], true) {
                return Err(CorpusError::MalformedManifest(format!(
                    "row {} assigned to more than one item",
                    item.row
                )));
            }
            if let Some(v) = item.valence {
                if !(0.0..=1.0).contains(&v) {
                    return Err(CorpusError::MalformedManifest(format!(
                        "item {:?} has valence {} outside [0, 1]",
                        item.id, v
                    )));
                }
            }
            if let Some(t) = item.template_id {
                if t > MAX_TEMPLATE_ID {
                    return Err(CorpusError::MalformedManifest(format!(
                        "item {:?} has template_id {} outside [0, {}]",
                        item.id, t, MAX_TEMPLATE_ID
                    )));
                }
            }
        }
        items.sort_by_key(|item| item.row);

        let mut by_id = HashMap::with_capacity(count);
        for item in &items {
            if by_id.insert(item.id.clone(), item.row).is_some() {
                return Err(CorpusError::DuplicateId(item.id.clone()));
            }
        }

        if let Some(row) = matrix
            .chunks_exact(dim)
            .position(|r| r.iter().any(|x| !x.is_finite()))
        {
            return Err(CorpusError::NonFiniteValue { row });
        }
        let norms: Vec<f64> = matrix.chunks_exact(dim).map(norm_f64).collect();
        if let Some(row) = norms.iter().position(|&n| !(n > MIN_NORM)) {
            return Err(CorpusError::ZeroNormVector { row });
        }

        Ok(EmbeddingCorpus {
            dim,
            matrix,
            items,
            norms,
            by_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.items.len()
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    pub fn norm(&self, row: usize) -> f64 {
        self.norms[row]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn item(&self, row: usize) -> &ItemMeta {
        &self.items[row]
    }

    pub fn items(&self) -> &[ItemMeta] {
        &self.items
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Every row, in order.
    pub fn all(&self) -> ItemSubset<'_> {
        ItemSubset {
            corpus: self,
            indices: (0..self.count()).collect(),
        }
    }

    /// All rows matching `predicate`, ascending.
    pub fn filter(&self, predicate: &ItemFilter) -> ItemSubset<'_> {
        ItemSubset {
            corpus: self,
            indices: self
                .items
                .iter()
                .filter(|item| predicate.matches(item))
                .map(|item| item.row)
                .collect(),
        }
    }

    /// Stacks corpora that share an embedding space into one, renumbering rows
    /// in input order.
    pub fn concat(parts: &[&EmbeddingCorpus]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| CorpusError::MalformedManifest("nothing to concatenate".into()))?;
        let dim = first.dim;
        let mut matrix = Vec::new();
        let mut items = Vec::new();
        for part in parts {
            if part.dim != dim {
                return Err(CorpusError::DimMismatch(dim, part.dim));
            }
            let offset = items.len();
            matrix.extend_from_slice(&part.matrix);
            items.extend(part.items.iter().map(|item| ItemMeta {
                row: item.row + offset,
                ..item.clone()
            }));
        }
        EmbeddingCorpus::from_parts(dim, matrix, items)
    }

    pub fn manifest_json(&self) -> String {
        let manifest = Manifest {
            format_version: u32::from(FORMAT_VERSION),
            dim: self.dim,
            count: self.count(),
            items: self.items.clone(),
        };
        serde_json::to_string_pretty(&manifest).expect("manifest serialises")
    }

    pub fn matrix_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + self.matrix.len() * 4);
        out.extend_from_slice(MATRIX_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Hex SHA-256 over the manifest and matrix encodings.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.manifest_json().as_bytes());
        hasher.update(self.matrix_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn write(&self, manifest_path: &Path, matrix_path: &Path) -> Result<()> {
        fs::write(manifest_path, self.manifest_json()).map_err(|source| CorpusError::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
        fs::write(matrix_path, self.matrix_bytes()).map_err(|source| CorpusError::Io {
            path: matrix_path.to_path_buf(),
            source,
        })
    }

    /// Writes `<dir>/<name>.json` and `<dir>/<name>.f32`.
    pub fn write_named(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let (manifest, matrix) = corpus_paths(&dir.join(name));
        self.write(&manifest, &matrix)?;
        Ok(manifest)
    }
}

/// Resolves `<stem>.json` / `<stem>.f32` from a path given with either
/// extension or none.
pub fn corpus_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("f32") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut manifest = stem.clone().into_os_string();
    manifest.push(".json");
    let mut matrix = stem.into_os_string();
    matrix.push(".f32");
    (manifest.into(), matrix.into())
}

fn parse_matrix(bytes: &[u8], dim: usize, count: usize) -> Result<Vec<f32>> {
    if bytes.len() < MATRIX_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MATRIX_MAGIC {
            return Err(CorpusError::BadMagic);
        }
        return Err(CorpusError::TruncatedMatrix {
            expected: MATRIX_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MATRIX_MAGIC {
        return Err(CorpusError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(CorpusError::UnsupportedVersion(version));
    }
    let header_dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let header_count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    if u64::from(header_dim) != dim as u64 {
        return Err(CorpusError::HeaderMismatch {
            field: "dim",
            manifest: dim as u64,
            matrix: u64::from(header_dim),
        });
    }
    if header_count != count as u64 {
        return Err(CorpusError::HeaderMismatch {
            field: "count",
            manifest: count as u64,
            matrix: header_count,
        });
    }
    let payload = &bytes[MATRIX_HEADER_LEN..];
    let expected = header_count * u64::from(header_dim) * 4;
    let actual = payload.len() as u64;
    if actual < expected {
        return Err(CorpusError::TruncatedMatrix { expected, actual });
    }
    if actual > expected {
        return Err(CorpusError::TrailingBytes(actual - expected));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Loads and validates a corpus. Both files are only read.
pub fn load_corpus(manifest_path: &Path, matrix_path: &Path) -> Result<EmbeddingCorpus> {
    let manifest_text = fs::read_to_string(manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| CorpusError::MalformedManifest(e.to_string()))?;
    if manifest.format_version != u32::from(FORMAT_VERSION) {
        return Err(CorpusError::MalformedManifest(format!(
            "format_version {} is not supported",
            manifest.format_version
        )));
    }
    if manifest.items.len() != manifest.count {
        return Err(CorpusError::MalformedManifest(format!(
            "count is {} but {} items are listed",
            manifest.count,
            manifest.items.len()
        )));
    }
    let bytes = fs::read(matrix_path).map_err(|source| CorpusError::Io {
        path: matrix_path.to_path_buf(),
        source,
    })?;
    let matrix = parse_matrix(&bytes, manifest.dim, manifest.count)?;
    EmbeddingCorpus::from_parts(manifest.dim, matrix, manifest.items)
}

/// Loads `<stem>.json` + `<stem>.f32`.
pub fn load_named(path: &Path) -> Result<EmbeddingCorpus> {
    let (manifest, matrix) = corpus_paths(path);
    load_corpus(&manifest, &matrix)
}

/// Metadata predicate; every present field must match.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_valence: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_group: Option<bool>,
}

impl ItemFilter {
    pub fn modality(modality: Modality) -> Self {
        ItemFilter {
            modality: Some(modality),
            ..Default::default()
        }
    }

    pub fn with_valence(mut self) -> Self {
        self.has_valence = Some(true);
        self
    }

    pub fn with_group(mut self) -> Self {
        self.has_group = Some(true);
        self
    }

    pub fn matches(&self, item: &ItemMeta) -> bool {
        self.modality.is_none_or(|m| item.modality == m)
            && self.group.is_none_or(|g| item.group == Some(g))
            && self.template_id.is_none_or(|t| item.template_id == Some(t))
            && self.source.as_ref().is_none_or(|s| &item.source == s)
            && self.has_valence.is_none_or(|h| item.valence.is_some() == h)
            && self.has_group.is_none_or(|h| item.group.is_some() == h)
    }
}

/// An ordered selection of rows from one corpus.
#[derive(Debug, Clone)]
pub struct ItemSubset<'a> {
    corpus: &'a EmbeddingCorpus,
    indices: Vec<usize>,
}

impl PartialEq for ItemSubset<'_> {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.corpus, other.corpus) && self.indices == other.indices
    }
}

impl<'a> ItemSubset<'a> {
    pub fn new(corpus: &'a EmbeddingCorpus, indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; corpus.count()];
        for &row in &indices {
            if row >= corpus.count() {
                return Err(CorpusError::RowOutOfRange {
                    row,
                    count: corpus.count(),
                });
            }
            if std::mem::replace(&mut seen[row], true) {
                return Err(CorpusError::DuplicateRow { row });
            }
        }
        Ok(ItemSubset { corpus, indices })
    }

    pub fn corpus(&self) -> &'a EmbeddingCorpus {
        self.corpus
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &'a ItemMeta> + '_ {
        self.indices.iter().map(|&r| self.corpus.item(r))
    }

    /// Rows of this subset that also match `predicate`, order preserved.
    pub fn refine(&self, predicate: &ItemFilter) -> ItemSubset<'a> {
        ItemSubset {
            corpus: self.corpus,
            indices: self
                .indices
                .iter()
                .copied()
                .filter(|&r| predicate.matches(self.corpus.item(r)))
                .collect(),
        }
    }

    pub fn contains(&self, row: usize) -> bool {
        self.indices.contains(&row)
    }
}

/// Splits a valence-rated subset into its `n` most and `n` least pleasant
/// items.
///
/// Items are ordered by valence descending, ties by ascending id; `A` is
/// the head of that order and `B` its tail, so the poles never overlap.
pub fn top_valence_split<'a>(
    corpus: &'a EmbeddingCorpus,
    subset: &ItemSubset<'a>,
    n: usize,
) -> Result<AttributeSetPair<'a>> {
    let needed = n.saturating_mul(2).max(2);
    if n == 0 || subset.len() < needed {
        return Err(CorpusError::InsufficientItems {
            needed,
            available: subset.len(),
        });
    }
    let mut rated = Vec::with_capacity(subset.len());
    for &row in subset.indices() {
        let item = corpus.item(row);
        let valence = item.valence.ok_or(CorpusError::MissingValence { row })?;
        rated.push((valence, item.id.as_str(), row));
    }
    rated.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let a = rated[..n].iter().map(|r| r.2).collect();
    let b = rated[rated.len() - n..].iter().map(|r| r.2).collect();
    Ok(AttributeSetPair {
        a: ItemSubset { corpus, indices: a },
        b: ItemSubset { corpus, indices: b },
        kind: PairKind::ValencePoles,
        group: None,
    })
}
