//! Segmentation probes over patch grids: PCA feature analysis, R² against
//! label masks, in-context prompt segmentation, KNN patch labeling and
//! unsupervised K-Means segmentation.

mod pca;
mod probe;
mod r2;

use std::collections::BTreeMap;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pca::{feature_rgb, fit_pca, fit_pca_grids, project_grid, reconstruct, FeatureGrid, PcaModel};
pub use probe::{
    in_context_segment, kmeans_segment, knn_segment, InContextResult, KMeansSegmentation,
};
pub use r2::{r2_score, R2Report};

/// Label value for cells excluded from scoring.
pub const IGNORE: i32 = -1;
/// Pixel value that encodes [`IGNORE`] in mask PNGs.
pub const IGNORE_PIXEL: u8 = 255;

/// Default PCA width used for R² scoring.
pub const DEFAULT_R2_COMPONENTS: usize = 16;

/// Per-cell class indices; [`IGNORE`] marks cells excluded from scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<i32>,
}

impl LabelMask {
    pub fn new(rows: usize, cols: usize, labels: Vec<i32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invariant("mask has an empty axis".into()));
        }
        if labels.len() != rows * cols {
            return Err(Error::Invariant(format!(
                "mask {rows}x{cols} needs {} labels, got {}",
                rows * cols,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l < IGNORE) {
            return Err(Error::Invariant(format!("mask label {bad} is negative")));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn filled(rows: usize, cols: usize, label: i32) -> Result<Self> {
        Self::new(rows, cols, vec![label; rows * cols])
    }

    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.cols + col]
    }

    /// Distinct non-ignore labels, ascending.
    pub fn classes(&self) -> Vec<i32> {
        let mut seen: Vec<i32> = self.labels.iter().copied().filter(|&l| l != IGNORE).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Fraction of cells where both masks agree on membership of `label`,
    /// measured as intersection over union. `None` if neither has it.
    pub fn iou(&self, other: &LabelMask, label: i32) -> Option<f64> {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.labels.iter().zip(&other.labels) {
            let (a, b) = (a == label, b == label);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        (union > 0).then(|| inter as f64 / union as f64)
    }
}

/// How a pixel-resolution mask is brought to patch-grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Downsample {
    /// Label at the source pixel nearest each cell center.
    #[default]
    Nearest,
    /// Most frequent non-ignore label within each cell's block; ties go to
    /// the smaller label. All-ignore blocks stay ignored.
    Majority,
}

pub fn downsample_mask(mask: &LabelMask, rows: usize, cols: usize, policy: Downsample) -> Result<LabelMask> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidParam("target grid has an empty axis".into()));
    }
    let mut labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let label = match policy {
                Downsample::Nearest => {
                    let sr = ((2 * r + 1) * mask.rows / (2 * rows)).min(mask.rows - 1);
                    let sc = ((2 * c + 1) * mask.cols / (2 * cols)).min(mask.cols - 1);
                    mask.get(sr, sc)
                }
                Downsample::Majority => {
                    let (r0, r1) = block(r, rows, mask.rows);
                    let (c0, c1) = block(c, cols, mask.cols);
                    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
                    for sr in r0..r1 {
                        for sc in c0..c1 {
                            let l = mask.get(sr, sc);
                            if l != IGNORE {
                                *counts.entry(l).or_default() += 1;
                            }
                        }
                    }
                    counts
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map_or(IGNORE, |(&l, _)| l)
                }
            };
            labels.push(label);
        }
    }
    LabelMask::new(rows, cols, labels)
}

/// Source index range covered by target cell `i` of `n` over `len` pixels.
/// Never empty.
fn block(i: usize, n: usize, len: usize) -> (usize, usize) {
    let start = i * len / n;
    let end = ((i + 1) * len / n).max(start + 1).min(len);
    (start.min(len - 1), end)
}

/// Writes an 8-bit single-channel PNG: pixel value = label, 255 = ignore.
pub fn write_mask_png(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let mut img = GrayImage::new(mask.cols as u32, mask.rows as u32);
    for (i, &l) in mask.labels.iter().enumerate() {
        let px = match l {
            IGNORE => IGNORE_PIXEL,
            0..=254 => l as u8,
            _ => {
                return Err(Error::InvalidParam(format!(
                    "label {l} does not fit an 8-bit mask"
                )))
            }
        };
        img.put_pixel((i % mask.cols) as u32, (i / mask.cols) as u32, Luma([px]));
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<LabelMask> {
    let img = image::open(path)?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Format(format!(
                "mask must be 8-bit single-channel, got {:?}",
                other.color()
            )))
        }
    };
    let labels = gray
        .pixels()
        .map(|p| if p.0[0] == IGNORE_PIXEL { IGNORE } else { p.0[0] as i32 })
        .collect();
    LabelMask::new(gray.height() as usize, gray.width() as usize, labels)
}
