use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{derive_seed, generate, regenerate, PipelineConfig, Provenance, Sample};
use crate::error::{Error, Result};
use crate::segmentation::{read_mask_png, write_mask_png};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub index: u64,
    pub seed: u64,
    pub pipeline: String,
    pub params: Value,
    pub file: String,
    /// Ground-truth mask PNG, for pipelines that produce one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

impl ManifestRow {
    pub fn provenance(&self) -> Provenance {
        Provenance {
            pipeline: self.pipeline.clone(),
            seed: Some(self.seed),
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub write_masks: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { write_masks: true }
    }
}

/// Generates `count` samples. Sample `i` uses `derive_seed(master_seed, i)`,
/// so the result does not depend on thread count or order.
pub fn generate_dataset(config: &PipelineConfig, master_seed: u64, count: u64) -> Result<Vec<Sample>> {
    (0..count)
        .into_par_iter()
        .map(|index| {
            let (image, mask) = generate(config, derive_seed(master_seed, index))?;
            Ok(Sample { index, image, mask })
        })
        .collect()
}

fn image_file(index: u64) -> String {
    format!("{index:06}.png")
}

fn mask_file(index: u64) -> String {
    format!("{index:06}_mask.png")
}

/// Writes one PNG per sample and the JSON-lines manifest into `dir`.
pub fn write_dataset<'a, I>(samples: I, dir: impl AsRef<Path>, options: DatasetOptions) -> Result<Vec<ManifestRow>>
where
    I: IntoIterator<Item = &'a Sample>,
{
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    let mut rows = Vec::new();
    for sample in samples {
        let prov = &sample.image.provenance;
        let seed = prov
            .seed
            .ok_or_else(|| Error::InvalidParam(format!("sample {} has no seed", sample.index)))?;
        let file = image_file(sample.index);
        sample.image.write_png(dir.join(&file))?;
        let mask = match (&sample.mask, options.write_masks) {
            (Some(m), true) => {
                let name = mask_file(sample.index);
                write_mask_png(m, dir.join(&name))?;
                Some(name)
            }
            _ => None,
        };
        let row = ManifestRow {
            index: sample.index,
            seed,
            pipeline: prov.pipeline.clone(),
            params: prov.params.clone(),
            file,
            mask,
        };
        serde_json::to_writer(&mut manifest, &row)?;
        manifest.write_all(b"\n")?;
        rows.push(row);
    }
    manifest.flush()?;
    Ok(rows)
}

pub fn read_manifest_rows(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    /// Indices whose regenerated PNG (or mask) differs from the file on disk.
    pub mismatched: Vec<u64>,
}

/// Regenerates every manifest row and compares against the stored files.
pub fn verify_dataset(dir: impl AsRef<Path>) -> Result<VerifyReport> {
    let dir = dir.as_ref();
    let rows = read_manifest_rows(dir.join(MANIFEST_FILE))?;
    let outcomes: Vec<(u64, bool)> = rows
        .par_iter()
        .map(|row| {
            let (image, mask) = regenerate(&row.provenance())?;
            let stored = std::fs::read(dir.join(&row.file))?;
            let mut same = image.to_png_bytes()? == stored;
            if let Some(name) = &row.mask {
                let stored_mask = read_mask_png(dir.join(name))?;
                same &= mask.as_ref() == Some(&stored_mask);
            }
            Ok((row.index, same))
        })
        .collect::<Result<_>>()?;
    Ok(VerifyReport {
        checked: outcomes.len(),
        mismatched: outcomes.into_iter().filter(|(_, ok)| !ok).map(|(i, _)| i).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgen::{GestaltSpec, Principle, TextureKind};

    #[test]
    fn ten_samples_ten_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::RandomTexture {
            width: 16,
            height: 16,
            kinds: TextureKind::all(),
        };
        let samples = generate_dataset(&cfg, 5, 10).unwrap();
        write_dataset(&samples, dir.path(), DatasetOptions::default()).unwrap();
        let rows = read_manifest_rows(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(rows.len(), 10);
        let pngs = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
            .count();
        assert_eq!(pngs, 10);
        let report = verify_dataset(dir.path()).unwrap();
        assert_eq!(report.checked, 10);
        assert!(report.mismatched.is_empty());
    }

    #[test]
    fn tampered_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::Gestalt(GestaltSpec::new(Principle::Proximity, 64, 64));
        let samples = generate_dataset(&cfg, 1, 3).unwrap();
        let rows = write_dataset(&samples, dir.path(), DatasetOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.mask.is_some()));
        let other = generate_dataset(&cfg, 2, 1).unwrap();
        other[0].image.write_png(dir.path().join(&rows[1].file)).unwrap();
        assert_eq!(verify_dataset(dir.path()).unwrap().mismatched, vec![1]);
    }
}
