use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use vismem_core::segmentation::{downsample_mask, read_mask_png, Downsample, LabelMask};
use vismem_core::store::{read_grid, read_store};
use vismem_core::{EmbeddingRecord, EmbeddingStore, Label, PatchGrid};

use crate::args::DownsampleArg;
use crate::error::{format_error, CliResult};

pub fn load_store(path: &Path) -> CliResult<EmbeddingStore> {
    read_store(path).with_context(|| format!("reading store {}", path.display()))
}

pub fn load_grid(path: &Path) -> CliResult<PatchGrid> {
    read_grid(path).with_context(|| format!("reading grid {}", path.display()))
}

pub fn load_mask(path: &Path) -> CliResult<LabelMask> {
    read_mask_png(path).with_context(|| format!("reading mask {}", path.display()))
}

/// Loads a mask and brings it to `rows x cols` if it is larger.
pub fn load_mask_for(path: &Path, rows: usize, cols: usize, policy: DownsampleArg) -> CliResult<LabelMask> {
    let mask = load_mask(path)?;
    if mask.rows == rows && mask.cols == cols {
        return Ok(mask);
    }
    let policy = match policy {
        DownsampleArg::Nearest => Downsample::Nearest,
        DownsampleArg::Majority => Downsample::Majority,
    };
    Ok(downsample_mask(&mask, rows, cols, policy)?)
}

/// Little-endian f32 values.
pub fn read_f32s(path: &Path) -> CliResult<Vec<f32>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() % 4 != 0 {
        return Err(format_error(format!(
            "{}: {} bytes is not a whole number of f32 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_matrix(path: &Path, dim: usize) -> CliResult<Vec<Vec<f32>>> {
    let values = read_f32s(path)?;
    if values.len() % dim != 0 {
        return Err(format_error(format!(
            "{}: {} values do not split into rows of {dim} (offset {} is mid-row)",
            path.display(),
            values.len(),
            values.len() / dim * dim * 4
        )));
    }
    Ok(values.chunks_exact(dim).map(<[f32]>::to_vec).collect())
}

pub struct LabelTable {
    pub ids: Vec<u64>,
    pub labels: Vec<Label>,
    pub class_names: Option<Vec<String>>,
}

/// Reads a label CSV. Needs a `label` column and may have an `id` column;
/// without one, ids are row numbers. Labels are all integers (`-1` or empty
/// for unlabeled) or all class names. Names are indexed by their position
/// in `known` when given, else by first appearance.
pub fn read_labels(path: &Path, known: &[String]) -> CliResult<LabelTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading labels {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let label_col = column("label").ok_or_else(|| format_error(format!("{}: no label column", path.display())))?;
    let id_col = column("id");

    let mut ids = Vec::new();
    let mut raw = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let line = row + 2;
        let id = match id_col {
            Some(c) => record[c]
                .parse::<u64>()
                .map_err(|e| format_error(format!("{}:{line}: id {:?}: {e}", path.display(), &record[c])))?,
            None => row as u64,
        };
        ids.push(id);
        raw.push(record[label_col].to_string());
    }

    let numeric = raw.iter().all(|s| s.is_empty() || s.parse::<i64>().is_ok());
    if numeric && known.is_empty() {
        let labels = raw
            .iter()
            .enumerate()
            .map(|(row, s)| match s.parse::<i64>() {
                Err(_) | Ok(-1) => Ok(None),
                Ok(v) => u32::try_from(v)
                    .map(Some)
                    .map_err(|_| format_error(format!("{}:{}: label {v} out of range", path.display(), row + 2))),
            })
            .collect::<CliResult<_>>()?;
        return Ok(LabelTable {
            ids,
            labels,
            class_names: None,
        });
    }
    let mut names: Vec<String> = known.to_vec();
    let mut index: BTreeMap<String, u32> = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
    let mut labels = Vec::with_capacity(raw.len());
    for (row, s) in raw.iter().enumerate() {
        if s.is_empty() {
            labels.push(None);
            continue;
        }
        if !known.is_empty() && !index.contains_key(s) {
            return Err(format_error(format!("{}:{}: class {s:?} not in --class-names", path.display(), row + 2)));
        }
        let id = *index.entry(s.clone()).or_insert_with(|| {
            names.push(s.clone());
            names.len() as u32 - 1
        });
        labels.push(Some(id));
    }
    Ok(LabelTable {
        ids,
        labels,
        class_names: Some(names),
    })
}

pub fn build_store(vectors: Vec<Vec<f32>>, table: LabelTable, dim: usize) -> CliResult<EmbeddingStore> {
    let records = table
        .ids
        .into_iter()
        .zip(vectors)
        .zip(table.labels)
        .map(|((id, v), l)| EmbeddingRecord::new(id, v, l))
        .collect();
    let mut store = EmbeddingStore::from_unsorted(dim, records)?;
    if let Some(names) = table.class_names {
        store = store.with_class_names(names)?;
    }
    Ok(store)
}
