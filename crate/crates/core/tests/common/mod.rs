#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vismem_core::{EmbeddingRecord, EmbeddingStore};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                x as f32
            })
            .collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

/// Labeled store with random gaps between ids.
pub fn random_store(rng: &mut impl Rng, n: usize, d: usize, classes: u32) -> EmbeddingStore {
    let mut id = 0u64;
    let records = (0..n)
        .map(|_| {
            id += rng.random_range(1..4);
            EmbeddingRecord::new(id, gaussian_vec(rng, d), Some(rng.random_range(0..classes)))
        })
        .collect();
    EmbeddingStore::new(d, records).unwrap()
}

/// Store whose vectors come from a handful of prototypes, so exact ties
/// are everywhere.
pub fn tie_heavy_store(rng: &mut impl Rng, n: usize, d: usize, prototypes: usize, classes: u32) -> EmbeddingStore {
    let protos: Vec<Vec<f32>> = (0..prototypes).map(|_| gaussian_vec(rng, d)).collect();
    let records = (0..n)
        .map(|i| {
            let p = &protos[rng.random_range(0..prototypes)];
            // power-of-two scales keep cosine ties bit-exact
            let scale = [1.0f32, 2.0, 0.5, 4.0][rng.random_range(0..4)];
            EmbeddingRecord::new(i as u64 * 2 + 1, p.iter().map(|x| x * scale).collect(), Some(rng.random_range(0..classes)))
        })
        .collect();
    EmbeddingStore::new(d, records).unwrap()
}

// ---- KNN oracle: full scan, full sort ----

pub fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// (id, label) in rank order.
pub fn oracle_knn(records: &[EmbeddingRecord], query: &[f32], k: usize) -> Vec<(u64, Option<u32>)> {
    let mut all: Vec<(f64, u64, Option<u32>)> = records
        .iter()
        .map(|r| (oracle_cosine(query, &r.vector), r.id, r.label))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, id, l)| (id, l)).collect()
}

/// Most frequent label; among equals, the one seen first in rank order.
pub fn oracle_vote(labels: &[u32]) -> Option<u32> {
    let count = |l: u32| labels.iter().filter(|&&x| x == l).count();
    let best = labels.iter().map(|&l| count(l)).max()?;
    labels.iter().copied().find(|&l| count(l) == best)
}

pub fn oracle_predict(records: &[EmbeddingRecord], query: &[f32], k: usize) -> Option<u32> {
    let labels: Vec<u32> = oracle_knn(records, query, k).iter().map(|(_, l)| l.unwrap()).collect();
    oracle_vote(&labels)
}

// ---- dense linear algebra oracles ----

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric
/// matrix by cyclic Jacobi rotations.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

pub fn sample_covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for row in cov.iter_mut() {
        for x in row.iter_mut() {
            *x /= (n - 1) as f64;
        }
    }
    (mean, cov)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Pooled one-hot R² via normal equations on `[1, X]`.
pub fn oracle_r2(features: &[Vec<f64>], labels: &[i32]) -> f64 {
    let m = features.len();
    let c = features[0].len();
    let design: Vec<Vec<f64>> = features.iter().map(|f| std::iter::once(1.0).chain(f.iter().copied()).collect()).collect();
    let p = c + 1;
    let mut xtx = vec![vec![0.0; p]; p];
    for row in &design {
        for i in 0..p {
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    let mut classes: Vec<i32> = labels.iter().copied().filter(|&l| l >= 0).collect();
    classes.sort_unstable();
    classes.dedup();
    let (mut sse, mut sst) = (0.0, 0.0);
    for &class in &classes {
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l == class))).collect();
        let xty: Vec<f64> = (0..p).map(|i| design.iter().zip(&y).map(|(r, yv)| r[i] * yv).sum()).collect();
        let beta = gauss_solve(xtx.clone(), xty);
        let mean = y.iter().sum::<f64>() / m as f64;
        for (row, yv) in design.iter().zip(&y) {
            let fit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            sse += (yv - fit) * (yv - fit);
            sst += (yv - mean) * (yv - mean);
        }
    }
    1.0 - sse / sst
}

// ---- K-Means oracle ----

/// Plain Lloyd from the given centers until the partition stops changing.
/// Returns the final inertia.
pub fn oracle_lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> f64 {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut assign: Vec<usize> = vec![usize::MAX; points.len()];
    loop {
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                (0..centers.len())
                    .min_by(|&a, &b| sq(p, &centers[a]).partial_cmp(&sq(p, &centers[b])).unwrap())
                    .unwrap()
            })
            .collect();
        if next == assign {
            return points.iter().zip(&assign).map(|(p, &c)| sq(p, &centers[c])).sum();
        }
        assign = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                for (j, x) in center.iter_mut().enumerate() {
                    *x = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
}
