use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::PatchGrid;

/// Mean-centered principal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `c` rows of length `d`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Variance along each kept component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// All `d` eigenvalues of the sample covariance, non-increasing.
    pub spectrum: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    pub samples: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Projection of one vector onto the kept components.
    pub fn transform(&self, v: &[f32]) -> Vec<f64> {
        self.components
            .iter()
            .map(|comp| {
                comp.iter()
                    .zip(v.iter().zip(&self.mean))
                    .map(|(w, (&x, m))| w * (x as f64 - m))
                    .sum()
            })
            .collect()
    }
}

/// Fits PCA with `c` components on `patches` (each of equal length `d`),
/// using the sample covariance (denominator `n - 1`).
///
/// Identical patches give a zero-variance model whose projections are all
/// zero.
pub fn fit_pca<V: AsRef<[f32]>>(patches: &[V], c: usize) -> Result<PcaModel> {
    let n = patches.len();
    let d = patches.first().map_or(0, |p| p.as_ref().len());
    if d == 0 {
        return Err(Error::InvalidParam("PCA needs non-empty vectors".into()));
    }
    if c == 0 || c > d {
        return Err(Error::InvalidParam(format!("component count {c} must be in 1..={d}")));
    }
    if n < c + 1 {
        return Err(Error::InvalidParam(format!(
            "PCA with {c} components needs at least {} samples, got {n}",
            c + 1
        )));
    }
    if let Some(p) = patches.iter().find(|p| p.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: p.as_ref().len(),
        });
    }

    let mut mean = vec![0.0f64; d];
    for p in patches {
        for (m, &x) in mean.iter_mut().zip(p.as_ref()) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, p) in patches.iter().enumerate() {
        for (j, &x) in p.as_ref().iter().enumerate() {
            centered[(i, j)] = x as f64 - mean[j];
        }
    }
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total_variance = cov.trace();

    let eigen = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let spectrum: Vec<f64> = order.iter().map(|&i| eigen.eigenvalues[i].max(0.0)).collect();

    let components = order[..c]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eigen.eigenvectors.column(i).iter().copied().collect();
            // fix the sign: largest-magnitude entry positive
            let pivot = v
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map_or(0.0, |(_, x)| x);
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();

    Ok(PcaModel {
        mean,
        components,
        explained_variance: spectrum[..c].to_vec(),
        spectrum,
        total_variance,
        samples: n,
    })
}

/// Fits one model over the patches of several grids.
pub fn fit_pca_grids(grids: &[&PatchGrid], c: usize) -> Result<PcaModel> {
    let patches: Vec<&[f32]> = grids.iter().flat_map(|g| g.iter_patches()).collect();
    if let Some(g) = grids.iter().find(|g| g.dim() != grids[0].dim()) {
        return Err(Error::DimensionMismatch {
            expected: grids[0].dim(),
            found: g.dim(),
        });
    }
    fit_pca(&patches, c)
}

/// A `rows x cols x channels` grid of per-cell features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::Invariant(format!(
                "feature grid {rows}x{cols}x{channels} needs {} values, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cell(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    /// Values of one channel across all cells.
    pub fn channel(&self, ch: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(ch).step_by(self.channels).copied()
    }
}

/// Centered projection of every patch onto the model's components.
pub fn project_grid(model: &PcaModel, grid: &PatchGrid) -> Result<FeatureGrid> {
    if model.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: grid.dim(),
        });
    }
    let data = grid.iter_patches().flat_map(|p| model.transform(p)).collect();
    FeatureGrid::new(grid.rows(), grid.cols(), model.n_components(), data)
}

/// Maps a projection back to input space.
pub fn reconstruct(model: &PcaModel, projection: &[f64]) -> Vec<f64> {
    let mut out = model.mean.clone();
    for (comp, &w) in model.components.iter().zip(projection) {
        for (o, x) in out.iter_mut().zip(comp) {
            *o += w * x;
        }
    }
    out
}

/// First three channels as 8-bit RGB with per-channel min-max scaling.
/// Constant channels map to 0; missing channels stay 0.
pub fn feature_rgb(features: &FeatureGrid) -> Vec<u8> {
    let mut rgb = vec![0u8; features.cells() * 3];
    for ch in 0..features.channels.min(3) {
        let (lo, hi) = features
            .channel(ch)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        let span = hi - lo;
        for (i, x) in features.channel(ch).enumerate() {
            let scaled = if span > 0.0 { (x - lo) / span } else { 0.0 };
            rgb[i * 3 + ch] = (scaled * 255.0).round() as u8;
        }
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_points() {
        let xs = [1.0f32, -2.0, 4.0, 0.5, 3.0];
        let pts: Vec<Vec<f32>> = xs.iter().map(|&x| vec![x, 0.0]).collect();
        let model = fit_pca(&pts, 1).unwrap();
        let c = &model.components[0];
        assert!((c[0].abs() - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12);
        let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / 5.0;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((model.explained_variance[0] - var).abs() < 1e-12);
    }

    #[test]
    fn identical_patches_project_to_zero() {
        let pts = vec![vec![0.3f32, -1.0, 2.0]; 6];
        let model = fit_pca(&pts, 2).unwrap();
        assert!(model.explained_variance.iter().all(|&v| v == 0.0));
        let grid = PatchGrid::from_patches(0, 2, 3, &pts).unwrap();
        let f = project_grid(&model, &grid).unwrap();
        assert!(f.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mean_patch_projects_to_zero() {
        let pts = vec![vec![1.0f32, 0.0], vec![-1.0, 2.0], vec![3.0, 1.0], vec![1.0, 1.0]];
        let model = fit_pca(&pts, 2).unwrap();
        assert!(model.transform(&[1.0, 1.0]).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn precondition_errors() {
        let pts = vec![vec![1.0f32, 0.0], vec![0.0, 1.0]];
        assert!(fit_pca(&pts, 2).is_err());
        assert!(fit_pca(&pts, 3).is_err());
        assert!(fit_pca(&pts, 0).is_err());
        let model = fit_pca(&pts, 1).unwrap();
        let grid = PatchGrid::new(0, 1, 1, 3, vec![1.0; 3]).unwrap();
        assert!(project_grid(&model, &grid).is_err());
    }

    #[test]
    fn rgb_scaling() {
        let f = FeatureGrid::new(1, 2, 3, vec![0.0, 5.0, 1.0, 2.0, 5.0, -1.0]).unwrap();
        assert_eq!(feature_rgb(&f), vec![0, 0, 255, 255, 0, 0]);
    }
}
