//! Lloyd's K-Means with k-means++ seeding, shared by RGB mask extraction and
//! patch-grid segmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procgen::derive_seed;

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 4;

/// Cluster count, iteration cap and number of seeded restarts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: DEFAULT_MAX_ITERS,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Result of a K-Means run over `n` points of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Fewer distinct points than requested clusters; `k()` reports the
    /// number actually used.
    pub reduced: bool,
}

impl KMeansFit {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, cluster: usize) -> &[f64] {
        &self.centroids[cluster * self.dim..(cluster + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance. Ties go to the lower index.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn check_data(data: &[f64], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::InvalidParam(format!(
            "data length {} is not a multiple of dim {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::InvalidParam("cluster count must be positive".into()));
    }
    if k > n {
        return Err(Error::InvalidParam(format!("{k} clusters requested for {n} points")));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invariant("non-finite value in clustering input".into()));
    }
    Ok(n)
}

/// k-means++ seeding. Stops early, returning fewer centers, once every
/// point coincides with a chosen center.
pub fn kmeans_plus_plus(data: &[f64], dim: usize, k: usize, seed: u64) -> Result<Vec<f64>> {
    let n = check_data(data, dim, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let mut centers = data[first * dim..(first + 1) * dim].to_vec();
    let mut d2: Vec<f64> = data.chunks_exact(dim).map(|p| sq_dist(p, &centers)).collect();
    while centers.len() / dim < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        // rounding can run past the end; fall back to the last positive weight
        if d2[pick] <= 0.0 {
            pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
        }
        let chosen = data[pick * dim..(pick + 1) * dim].to_vec();
        for (w, p) in d2.iter_mut().zip(data.chunks_exact(dim)) {
            *w = w.min(sq_dist(p, &chosen));
        }
        centers.extend(chosen);
    }
    Ok(centers)
}

/// Seeds with k-means++ then runs Lloyd iterations.
pub fn kmeans(data: &[f64], dim: usize, k: usize, seed: u64, max_iters: usize) -> Result<KMeansFit> {
    let init = kmeans_plus_plus(data, dim, k, seed)?;
    let reduced = init.len() / dim < k;
    let mut fit = lloyd(data, dim, init, max_iters)?;
    fit.reduced = reduced;
    Ok(fit)
}

/// Best of `params.restarts` seeded runs by final inertia; ties keep the
/// earlier run. Run 0 uses `seed` itself, so a single restart is [`kmeans`].
pub fn kmeans_restarts(data: &[f64], dim: usize, params: &KMeansParams, seed: u64) -> Result<KMeansFit> {
    if params.restarts == 0 {
        return Err(Error::InvalidParam("restarts must be positive".into()));
    }
    let mut best = kmeans(data, dim, params.k, seed, params.max_iters)?;
    for r in 1..params.restarts {
        let fit = kmeans(data, dim, params.k, derive_seed(seed, r as u64), params.max_iters)?;
        if fit.inertia < best.inertia {
            best = fit;
        }
    }
    Ok(best)
}

/// Lloyd iterations from explicit initial centroids (row-major).
///
/// Each iteration assigns every point to its nearest centroid, records the
/// inertia, then moves centroids to cluster means. A cluster left empty is
/// re-seeded at the point farthest from its centroid. Stops when an
/// assignment step changes nothing or after `max_iters` assignment steps.
pub fn lloyd(data: &[f64], dim: usize, init: Vec<f64>, max_iters: usize) -> Result<KMeansFit> {
    if init.is_empty() || init.len() % dim != 0 {
        return Err(Error::InvalidParam("initial centroids do not match dim".into()));
    }
    let k = init.len() / dim;
    let n = check_data(data, dim, k)?;
    if max_iters == 0 {
        return Err(Error::InvalidParam("max_iters must be positive".into()));
    }
    let mut centroids = init;
    let mut assignment = vec![usize::MAX; n];
    let mut dists = vec![0.0f64; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        for (i, p) in data.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(p, &centroids, dim);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        history.push(dists.iter().sum());
        if !changed {
            converged = true;
            break;
        }
        if iterations == max_iters {
            break;
        }

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &c) in data.chunks_exact(dim).zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *dst = s * inv;
                }
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            // distances to the updated centroids of each point's own cluster
            let mut far: Vec<(f64, usize)> = data
                .chunks_exact(dim)
                .zip(&assignment)
                .enumerate()
                .map(|(i, (p, &c))| (sq_dist(p, &centroids[c * dim..(c + 1) * dim]), i))
                .collect();
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (c, &(_, i)) in empty.iter().zip(&far) {
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
            }
        }
    }

    Ok(KMeansFit {
        dim,
        inertia: *history.last().expect("at least one iteration"),
        centroids,
        assignment,
        inertia_history: history,
        iterations,
        converged,
        reduced: false,
    })
}
