//! Embedding databases ("visual memory") and patch grids, plus their
//! on-disk formats.
//!
//! Store file (`VMEM`), all integers little-endian:
//!
//! ```text
//! magic "VMEM" | version u32 | dim u32 | count u64 | flags u32
//! count x { id u64 | label i64 | dim x f32 }
//! ```
//!
//! Flag bit 0 marks an L2-normalized store. A label of `-1` means unlabeled.
//!
//! Grid file (`VGRD`):
//!
//! ```text
//! magic "VGRD" | version u32 | dim u32 | rows u32 | cols u32 | image_id u64
//! rows*cols*dim x f32   (row-major, patch-major)
//! ```
//!
//! A store may carry a UTF-8 JSON sidecar at `<path>.json` holding class
//! names and provenance; see [`StoreManifest`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STORE_MAGIC: [u8; 4] = *b"VMEM";
pub const GRID_MAGIC: [u8; 4] = *b"VGRD";
pub const FORMAT_VERSION: u32 = 1;

pub const STORE_HEADER_LEN: usize = 24;
pub const GRID_HEADER_LEN: usize = 28;

const FLAG_NORMALIZED: u32 = 1;
const UNLABELED: i64 = -1;

/// Maximum deviation from unit norm tolerated in a normalized store.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Class index of a record. `None` is the unlabeled sentinel.
pub type Label = Option<u32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: u64,
    pub vector: Vec<f32>,
    pub label: Label,
}

impl EmbeddingRecord {
    pub fn new(id: u64, vector: Vec<f32>, label: Label) -> Self {
        Self { id, vector, label }
    }
}

/// Immutable set of embedding records sharing one dimension, ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    normalized: bool,
    class_names: Option<Vec<String>>,
}

impl EmbeddingStore {
    /// Builds a validated, unnormalized store without class names.
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        Self::from_parts(dim, records, false, None)
    }

    pub fn from_parts(
        dim: usize,
        records: Vec<EmbeddingRecord>,
        normalized: bool,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let store = Self {
            dim,
            records,
            normalized,
            class_names,
        };
        store.validate()?;
        Ok(store)
    }

    /// Builds a store from records in arbitrary order; they are sorted by id.
    pub fn from_unsorted(dim: usize, mut records: Vec<EmbeddingRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        Self::new(dim, records)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        self.class_names = Some(names);
        self.validate()?;
        Ok(self)
    }

    /// Checks every store invariant.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Invariant("dimension must be at least 1".into()));
        }
        if self.dim > u32::MAX as usize {
            return Err(Error::Invariant(format!("dimension {} too large", self.dim)));
        }
        let mut prev: Option<u64> = None;
        for rec in &self.records {
            if rec.vector.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: rec.vector.len(),
                });
            }
            if let Some(p) = prev {
                if rec.id <= p {
                    return Err(Error::Invariant(format!(
                        "ids must be strictly increasing: {} follows {}",
                        rec.id, p
                    )));
                }
            }
            prev = Some(rec.id);
            if rec.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invariant(format!(
                    "record {} has a non-finite component",
                    rec.id
                )));
            }
            if self.normalized {
                let norm = l2_norm(&rec.vector);
                if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::Invariant(format!(
                        "record {} has norm {norm} in a normalized store",
                        rec.id
                    )));
                }
            }
            if let (Some(label), Some(names)) = (rec.label, &self.class_names) {
                if label as usize >= names.len() {
                    return Err(Error::Invariant(format!(
                        "record {} has label {label} but only {} class names",
                        rec.id,
                        names.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.records.binary_search_by_key(&id, |r| r.id).ok()
    }

    pub fn get(&self, id: u64) -> Option<&EmbeddingRecord> {
        self.position(id).map(|i| &self.records[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(|r| r.id)
    }

    /// True when every record carries a label.
    pub fn is_fully_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    /// Same metadata, different records. Used by mutation paths.
    pub(crate) fn with_records(&self, records: Vec<EmbeddingRecord>) -> Result<Self> {
        Self::from_parts(self.dim, records, self.normalized, self.class_names.clone())
    }
}

/// Euclidean norm accumulated in f64.
pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Returns a copy of `store` with every vector scaled to unit L2 norm.
pub fn l2_normalize(store: &EmbeddingStore) -> Result<EmbeddingStore> {
    let mut records = Vec::with_capacity(store.len());
    for rec in store.records() {
        let norm = l2_norm(&rec.vector);
        if norm == 0.0 {
            return Err(Error::ZeroNorm(rec.id));
        }
        let vector = rec.vector.iter().map(|&x| (x as f64 / norm) as f32).collect();
        records.push(EmbeddingRecord::new(rec.id, vector, rec.label));
    }
    EmbeddingStore::from_parts(store.dim(), records, true, store.class_names.clone())
}

/// Serializes a store to the `VMEM` byte layout.
pub fn encode_store(store: &EmbeddingStore) -> Result<Vec<u8>> {
    store.validate()?;
    let dim = store.dim();
    let mut buf = Vec::with_capacity(STORE_HEADER_LEN + store.len() * (16 + 4 * dim));
    buf.extend_from_slice(&STORE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    let flags = if store.is_normalized() { FLAG_NORMALIZED } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    for rec in store.records() {
        buf.extend_from_slice(&rec.id.to_le_bytes());
        let label = rec.label.map_or(UNLABELED, i64::from);
        buf.extend_from_slice(&label.to_le_bytes());
        for x in &rec.vector {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Parses the `VMEM` byte layout. Class names are not part of the binary
/// format and come back as `None`.
pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut cur = Cursor::new(bytes);
    cur.require(STORE_HEADER_LEN as u64)?;
    let magic = cur.magic();
    if magic != STORE_MAGIC {
        return Err(Error::BadMagic {
            expected: STORE_MAGIC,
            found: magic,
        });
    }
    let version = cur.u32();
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = cur.u32() as usize;
    let count = cur.u64();
    let flags = cur.u32();
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(Error::Format(format!("unknown flag bits {flags:#x}")));
    }
    let record_len = 16u64 + 4 * dim as u64;
    let expected = count
        .checked_mul(record_len)
        .and_then(|p| p.checked_add(STORE_HEADER_LEN as u64))
        .ok_or_else(|| Error::Format(format!("record count {count} overflows")))?;
    cur.require(expected)?;
    if (bytes.len() as u64) > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} records",
            bytes.len() as u64 - expected
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = cur.u64();
        let raw_label = cur.i64();
        let label = match raw_label {
            UNLABELED => None,
            l if (0..=u32::MAX as i64).contains(&l) => Some(l as u32),
            l => {
                return Err(Error::Invariant(format!("record {id} has invalid label {l}")));
            }
        };
        let vector = (0..dim).map(|_| cur.f32()).collect();
        records.push(EmbeddingRecord::new(id, vector, label));
    }
    EmbeddingStore::from_parts(dim, records, flags & FLAG_NORMALIZED != 0, None)
}

/// Writes the binary store file. Identical stores produce identical bytes.
pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_store(store)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.sync_all()?;
    Ok(())
}

/// Reads and validates a store file. If a sidecar manifest exists its class
/// names are attached to the store.
pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let store = decode_store(&bytes)?;
    let sidecar = manifest_path(path);
    if sidecar.exists() {
        let manifest = read_manifest(&sidecar)?;
        manifest.check_against(&store)?;
        if let Some(names) = manifest.class_names {
            return store.with_class_names(names);
        }
    }
    Ok(store)
}

/// JSON sidecar written next to a store file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub dim: usize,
    pub count: usize,
    pub class_names: Option<Vec<String>>,
    pub source: Option<String>,
    pub seed: Option<u64>,
}

impl StoreManifest {
    pub fn for_store(store: &EmbeddingStore, source: Option<String>, seed: Option<u64>) -> Self {
        Self {
            dim: store.dim(),
            count: store.len(),
            class_names: store.class_names().map(<[String]>::to_vec),
            source,
            seed,
        }
    }

    fn check_against(&self, store: &EmbeddingStore) -> Result<()> {
        if self.dim != store.dim() || self.count != store.len() {
            return Err(Error::Format(format!(
                "manifest describes dim={} count={}, store has dim={} count={}",
                self.dim,
                self.count,
                store.dim(),
                store.len()
            )));
        }
        Ok(())
    }
}

/// Sidecar location for a store file: the same path with `.json` appended.
pub fn manifest_path(store_path: &Path) -> PathBuf {
    let mut s = store_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_manifest(manifest: &StoreManifest, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<StoreManifest> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the store file together with its JSON sidecar.
pub fn write_store_with_manifest(
    store: &EmbeddingStore,
    path: impl AsRef<Path>,
    source: Option<String>,
    seed: Option<u64>,
) -> Result<()> {
    let path = path.as_ref();
    write_store(store, path)?;
    write_manifest(&StoreManifest::for_store(store, source, seed), manifest_path(path))
}

/// Per-patch embeddings of one image, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    image_id: u64,
    rows: usize,
    cols: usize,
    dim: usize,
    patches: Vec<f32>,
}

impl PatchGrid {
    pub fn new(image_id: u64, rows: usize, cols: usize, dim: usize, patches: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::Invariant(format!(
                "grid shape {rows}x{cols}x{dim} has an empty axis"
            )));
        }
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::Invariant("grid shape overflows".into()))?;
        if patches.len() != expected {
            return Err(Error::Invariant(format!(
                "grid {rows}x{cols}x{dim} needs {expected} values, got {}",
                patches.len()
            )));
        }
        if patches.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invariant("grid has a non-finite component".into()));
        }
        Ok(Self {
            image_id,
            rows,
            cols,
            dim,
            patches,
        })
    }

    /// Builds a grid from one vector per cell, row-major.
    pub fn from_patches(image_id: u64, rows: usize, cols: usize, patches: &[Vec<f32>]) -> Result<Self> {
        let dim = patches.first().map_or(0, Vec::len);
        if let Some(bad) = patches.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(image_id, rows, cols, dim, patches.concat())
    }

    pub fn image_id(&self) -> u64 {
        self.image_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.patches
    }

    pub fn patch(&self, row: usize, col: usize) -> &[f32] {
        self.cell(row * self.cols + col)
    }

    /// Patch by flat row-major cell index.
    pub fn cell(&self, index: usize) -> &[f32] {
        &self.patches[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter_patches(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.patches.chunks_exact(self.dim)
    }
}

pub fn encode_grid(grid: &PatchGrid) -> Vec<u8> {
    let mut buf = Vec::with_capacity(GRID_HEADER_LEN + grid.patches.len() * 4);
    buf.extend_from_slice(&GRID_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(grid.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.cols as u32).to_le_bytes());
    buf.extend_from_slice(&grid.image_id.to_le_bytes());
    for x in &grid.patches {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_grid(bytes: &[u8]) -> Result<PatchGrid> {
    let mut cur = Cursor::new(bytes);
    cur.require(GRID_HEADER_LEN as u64)?;
    let magic = cur.magic();
    if magic != GRID_MAGIC {
        return Err(Error::BadMagic {
            expected: GRID_MAGIC,
            found: magic,
        });
    }
    let version = cur.u32();
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = cur.u32() as u64;
    let rows = cur.u32() as u64;
    let cols = cur.u32() as u64;
    let image_id = cur.u64();
    let expected = GRID_HEADER_LEN as u64 + rows * cols * dim * 4;
    cur.require(expected)?;
    if (bytes.len() as u64) > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after grid payload",
            bytes.len() as u64 - expected
        )));
    }
    let patches = (0..rows * cols * dim).map(|_| cur.f32()).collect();
    PatchGrid::new(image_id, rows as usize, cols as usize, dim as usize, patches)
}

pub fn write_grid(grid: &PatchGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_grid(grid))?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<PatchGrid> {
    decode_grid(&fs::read(path)?)
}

/// Little-endian reader over a byte slice. Callers check lengths with
/// `require` before reading.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn require(&self, total: u64) -> Result<()> {
        if (self.bytes.len() as u64) < total {
            return Err(Error::Truncated {
                expected: total,
                actual: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }

    fn magic(&mut self) -> [u8; 4] {
        self.take()
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn i64(&mut self) -> i64 {
        i64::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}
