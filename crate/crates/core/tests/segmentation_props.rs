mod common;

use proptest::prelude::*;
use rand::Rng;
use vismem_core::segmentation::{
    downsample_mask, fit_pca, in_context_segment, kmeans_segment, knn_segment, project_grid, r2_score, reconstruct,
    Downsample, FeatureGrid, LabelMask, PcaModel, IGNORE,
};
use vismem_core::{EmbeddingRecord, EmbeddingStore, PatchGrid};

/// Gaussian rows with per-axis scales, so the spectrum is spread out.
fn anisotropic(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    let scales: Vec<f32> = (0..d).map(|_| rng.random_range(0.1..5.0)).collect();
    let shift: Vec<f32> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    (0..n)
        .map(|_| {
            let g = common::gaussian_vec(rng, d);
            g.iter().zip(&scales).zip(&shift).map(|((x, s), m)| x * s + m).collect()
        })
        .collect()
}

fn as_f64(rows: &[Vec<f32>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect()
}

fn reconstruction_error(model: &PcaModel, rows: &[Vec<f32>]) -> f64 {
    rows.iter()
        .map(|r| {
            let back = reconstruct(model, &model.transform(r));
            r.iter().zip(&back).map(|(&x, y)| (x as f64 - y).powi(2)).sum::<f64>()
        })
        .sum()
}

fn random_features(rng: &mut impl Rng, cells: usize, c: usize) -> Vec<Vec<f64>> {
    (0..cells)
        .map(|_| common::gaussian_vec(rng, c).iter().map(|&x| x as f64).collect())
        .collect()
}

fn feature_grid(rows: usize, cols: usize, feats: &[Vec<f64>]) -> FeatureGrid {
    FeatureGrid::new(rows, cols, feats[0].len(), feats.concat()).unwrap()
}

fn random_mask(rng: &mut impl Rng, cells: usize, classes: i32, ignore: bool) -> Vec<i32> {
    loop {
        let labels: Vec<i32> = (0..cells)
            .map(|_| if ignore && rng.random_bool(0.1) { IGNORE } else { rng.random_range(0..classes) })
            .collect();
        let mut seen: Vec<i32> = labels.iter().copied().filter(|&l| l != IGNORE).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() >= 2 {
            return labels;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn pca_against_jacobi_oracle(seed in any::<u64>(), d in 2usize..12, extra in 1usize..80, c_frac in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let c = 1 + ((d - 1) as f64 * c_frac) as usize;
        let n = c + 1 + extra;
        let rows = anisotropic(&mut rng, n, d);
        let model = fit_pca(&rows, c).unwrap();
        let (_, cov) = common::sample_covariance(&as_f64(&rows));
        let (values, _) = common::jacobi_eigen(&cov);
        let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
        let scale = values[0].abs().max(1e-12);

        for (i, a) in model.components.iter().enumerate() {
            for (j, b) in model.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-6, "components {i},{j}: {dot}");
            }
        }
        prop_assert!(model.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        for (got, want) in model.spectrum.iter().zip(&values) {
            prop_assert!((got - want.max(0.0)).abs() <= 1e-9 * scale, "{got} vs {want}");
        }
        prop_assert!((model.spectrum.iter().sum::<f64>() - trace).abs() <= 1e-6 * trace);
        prop_assert!((model.total_variance - trace).abs() <= 1e-9 * trace);

        let discarded: f64 = values[c..].iter().map(|v| v.max(0.0)).sum::<f64>() * (n - 1) as f64;
        let err = reconstruction_error(&model, &rows);
        prop_assert!((err - discarded).abs() <= 1e-6 * discarded.max(1e-9 * trace * n as f64), "{err} vs {discarded}");
    }

    #[test]
    fn projected_variance_matches_explained(seed in any::<u64>(), d in 2usize..8) {
        let mut rng = common::rng(seed);
        let rows = anisotropic(&mut rng, 60, d);
        let model = fit_pca(&rows, d).unwrap();
        let grid = PatchGrid::from_patches(0, 6, 10, &rows).unwrap();
        let feats = project_grid(&model, &grid).unwrap();
        for ch in 0..d {
            let vals: Vec<f64> = feats.channel(ch).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() <= 1e-9 * model.explained_variance[0].sqrt().max(1.0));
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            prop_assert!((var - model.explained_variance[ch]).abs() <= 1e-9 * model.explained_variance[0]);
        }
    }

    #[test]
    fn r2_against_normal_equations(seed in any::<u64>(), rows in 2usize..64, cols in 2usize..64, c in 1usize..9, classes in 2i32..6, ignore in any::<bool>()) {
        let mut rng = common::rng(seed);
        let cells = rows * cols;
        prop_assume!(cells > c + 8);
        let feats = random_features(&mut rng, cells, c);
        let labels = random_mask(&mut rng, cells, classes, ignore);
        let report = r2_score(&feature_grid(rows, cols, &feats), &LabelMask::new(rows, cols, labels.clone()).unwrap()).unwrap();
        let kept: Vec<usize> = (0..cells).filter(|&i| labels[i] != IGNORE).collect();
        prop_assume!(kept.len() > c + 2);
        let oracle = common::oracle_r2(
            &kept.iter().map(|&i| feats[i].clone()).collect::<Vec<_>>(),
            &kept.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        );
        prop_assert!((report.r2_raw - oracle).abs() <= 1e-9, "{} vs {oracle}", report.r2_raw);
        prop_assert_eq!(report.cells, kept.len());
        prop_assert!((0.0..=1.0).contains(&report.r2));
    }

    #[test]
    fn r2_affine_invariance(seed in any::<u64>(), rows in 3usize..32, cols in 3usize..32, c in 1usize..7) {
        let mut rng = common::rng(seed);
        let cells = rows * cols;
        prop_assume!(cells > c + 8);
        let feats = random_features(&mut rng, cells, c);
        // random mixing matrix kept well conditioned by a dominant diagonal
        let mix: Vec<Vec<f64>> = (0..c)
            .map(|i| (0..c).map(|j| if i == j { rng.random_range(2.0..4.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 } } else { rng.random_range(-0.5..0.5) }).collect())
            .collect();
        let shift: Vec<f64> = (0..c).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mixed: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| (0..c).map(|j| (0..c).map(|i| f[i] * mix[i][j]).sum::<f64>() + shift[j]).collect())
            .collect();
        let mask = LabelMask::new(rows, cols, random_mask(&mut rng, cells, 3, false)).unwrap();
        let a = r2_score(&feature_grid(rows, cols, &feats), &mask).unwrap();
        let b = r2_score(&feature_grid(rows, cols, &mixed), &mask).unwrap();
        prop_assert!((a.r2_raw - b.r2_raw).abs() <= 1e-7);
    }

    #[test]
    fn in_context_ignores_query_scale(seed in any::<u64>(), d in 2usize..10, exp in -10i32..10) {
        let mut rng = common::rng(seed);
        let prompt_cells: Vec<Vec<f32>> = (0..12).map(|_| common::gaussian_vec(&mut rng, d)).collect();
        let prompt = PatchGrid::from_patches(0, 3, 4, &prompt_cells).unwrap();
        let mask = LabelMask::new(3, 4, (0..12).map(|i| i32::from(i % 3 == 0)).collect()).unwrap();
        let query_cells: Vec<Vec<f32>> = (0..6).map(|_| common::gaussian_vec(&mut rng, d)).collect();
        let scaled: Vec<Vec<f32>> = query_cells.iter().map(|v| v.iter().map(|x| x * 2f32.powi(exp)).collect()).collect();
        let a = in_context_segment(&prompt, &mask, &PatchGrid::from_patches(1, 2, 3, &query_cells).unwrap(), 0.1).unwrap();
        let b = in_context_segment(&prompt, &mask, &PatchGrid::from_patches(1, 2, 3, &scaled).unwrap(), 0.1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn knn_segment_matches_patch_oracle(seed in any::<u64>(), d in 1usize..8, k in 1usize..6) {
        let mut rng = common::rng(seed);
        let memory = common::random_store(&mut rng, 80, d, 4);
        let cells: Vec<Vec<f32>> = (0..20).map(|_| common::gaussian_vec(&mut rng, d)).collect();
        let mask = knn_segment(&PatchGrid::from_patches(0, 4, 5, &cells).unwrap(), &memory, k).unwrap();
        for (i, q) in cells.iter().enumerate() {
            prop_assert_eq!(Some(mask.labels[i] as u32), common::oracle_predict(memory.records(), q, k));
        }
    }

    #[test]
    fn kmeans_segment_inertia_monotone(seed in any::<u64>(), d in 1usize..8, k in 2usize..6) {
        let mut rng = common::rng(seed);
        let cells: Vec<Vec<f32>> = (0..48).map(|_| common::gaussian_vec(&mut rng, d)).collect();
        let seg = kmeans_segment(&PatchGrid::from_patches(0, 6, 8, &cells).unwrap(), k, seed).unwrap();
        prop_assert!(seg.fit.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        prop_assert!(seg.mask.labels.iter().all(|&l| (0..k as i32).contains(&l)));
    }
}

#[test]
fn axis_aligned_pca() {
    let rows: Vec<Vec<f32>> = [-2.0f32, -1.0, 0.5, 3.0, 4.5].iter().map(|&x| vec![x, 0.0]).collect();
    let model = fit_pca(&rows, 1).unwrap();
    assert!((model.components[0][0] - 1.0).abs() < 1e-12 && model.components[0][1].abs() < 1e-12);
    let xs = [-2.0f64, -1.0, 0.5, 3.0, 4.5];
    let mean = xs.iter().sum::<f64>() / 5.0;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
    assert!((model.explained_variance[0] - var).abs() < 1e-12);
}

#[test]
fn isotropic_pca_has_flat_spectrum() {
    let mut rng = common::rng(21);
    let rows: Vec<Vec<f32>> = (0..20_000).map(|_| common::gaussian_vec(&mut rng, 2)).collect();
    let model = fit_pca(&rows, 2).unwrap();
    let (a, b) = (model.explained_variance[0], model.explained_variance[1]);
    // each variance estimate has sampling sd near sqrt(2 / n) = 0.01
    assert!((a - b).abs() < 0.1, "{a} {b}");
}

#[test]
fn identical_patches_give_zero_projection() {
    let rows = vec![vec![1.0f32, -2.0, 3.0]; 6];
    let model = fit_pca(&rows, 2).unwrap();
    assert_eq!(model.total_variance, 0.0);
    let grid = PatchGrid::from_patches(0, 2, 3, &rows).unwrap();
    assert!(project_grid(&model, &grid).unwrap().data.iter().all(|&x| x == 0.0));
    assert!(model.transform(&rows[0]).iter().all(|&x| x == 0.0));
}

#[test]
fn r2_degenerate_cases() {
    let labels: Vec<i32> = (0..30).map(|i| i % 3).collect();
    let one_hot: Vec<f64> = labels.iter().flat_map(|&l| (0..3).map(move |c| f64::from(u8::from(l == c)))).collect();
    let mask = LabelMask::new(5, 6, labels).unwrap();
    let perfect = r2_score(&FeatureGrid::new(5, 6, 3, one_hot).unwrap(), &mask).unwrap();
    assert!((perfect.r2 - 1.0).abs() <= 1e-9);
    let constant = r2_score(&FeatureGrid::new(5, 6, 2, vec![0.7; 60]).unwrap(), &mask).unwrap();
    assert_eq!(constant.r2, 0.0);
    assert_eq!(constant.r2_raw, 0.0);
    assert!(r2_score(&FeatureGrid::new(5, 6, 2, vec![0.7; 60]).unwrap(), &LabelMask::filled(5, 6, 1).unwrap()).is_err());
}

#[test]
fn independent_features_explain_little() {
    let mut rng = common::rng(22);
    let (rows, cols, c) = (64, 64, 8);
    let feats = random_features(&mut rng, rows * cols, c);
    let mask = LabelMask::new(rows, cols, random_mask(&mut rng, rows * cols, 2, false)).unwrap();
    let r = r2_score(&feature_grid(rows, cols, &feats), &mask).unwrap();
    // expectation is c / (cells - 1)
    let expected = c as f64 / (rows * cols - 1) as f64;
    assert!(r.r2_raw < 6.0 * expected, "{} vs {expected}", r.r2_raw);
}

#[test]
fn two_cluster_grids_recovered_exactly() {
    let mut rng = common::rng(23);
    let a = common::gaussian_vec(&mut rng, 16);
    let b: Vec<f32> = a.iter().map(|x| -x).collect();
    let truth: Vec<i32> = (0..35).map(|i| i32::from((i / 5 + i % 5) % 3 == 0)).collect();
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng, v: &[f32]| -> Vec<f32> {
        v.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect()
    };
    let cells: Vec<Vec<f32>> = truth.iter().map(|&t| jitter(&mut rng, if t == 1 { &a } else { &b })).collect();
    let query = PatchGrid::from_patches(0, 5, 7, &cells).unwrap();
    let prompt = PatchGrid::from_patches(1, 1, 2, &[a.clone(), b.clone()]).unwrap();
    let prompt_mask = LabelMask::new(1, 2, vec![1, 0]).unwrap();
    let out = in_context_segment(&prompt, &prompt_mask, &query, 0.5).unwrap();
    let truth_mask = LabelMask::new(5, 7, truth.clone()).unwrap();
    assert_eq!(out.mask, truth_mask);
    assert_eq!(out.mask.iou(&truth_mask, 1), Some(1.0));

    let memory = EmbeddingStore::new(
        16,
        vec![EmbeddingRecord::new(0, b.clone(), Some(0)), EmbeddingRecord::new(1, a.clone(), Some(1))],
    )
    .unwrap();
    assert_eq!(knn_segment(&query, &memory, 1).unwrap(), truth_mask);

    let seg = kmeans_segment(&query, 2, 3).unwrap();
    let flip = seg.mask.labels[0] != truth[0];
    let relabeled: Vec<i32> = seg.mask.labels.iter().map(|&l| if flip { 1 - l } else { l }).collect();
    assert_eq!(relabeled, truth);
}

#[test]
fn knn_segment_self_memory() {
    let mut rng = common::rng(24);
    let cells: Vec<Vec<f32>> = (0..30).map(|_| common::gaussian_vec(&mut rng, 5)).collect();
    let labels: Vec<u32> = (0..30).map(|_| rng.random_range(0..4)).collect();
    let memory = EmbeddingStore::new(
        5,
        cells.iter().zip(&labels).enumerate().map(|(i, (v, &l))| EmbeddingRecord::new(i as u64, v.clone(), Some(l))).collect(),
    )
    .unwrap();
    let mask = knn_segment(&PatchGrid::from_patches(0, 5, 6, &cells).unwrap(), &memory, 1).unwrap();
    assert_eq!(mask.labels, labels.iter().map(|&l| l as i32).collect::<Vec<_>>());
}

#[test]
fn kmeans_one_cluster_per_patch() {
    let mut rng = common::rng(25);
    let cells: Vec<Vec<f32>> = (0..12).map(|_| common::gaussian_vec(&mut rng, 3)).collect();
    let seg = kmeans_segment(&PatchGrid::from_patches(0, 3, 4, &cells).unwrap(), 12, 1).unwrap();
    assert_eq!(seg.fit.inertia, 0.0);
    let mut ids = seg.mask.labels.clone();
    ids.sort_unstable();
    assert_eq!(ids, (0..12).collect::<Vec<_>>());
}

#[test]
fn downsampling_policies() {
    // 4x4 mask of 2x2 blocks labeled 0..4, one pixel flipped in block 0
    let mut labels: Vec<i32> = (0..16).map(|i| ((i / 4) / 2 * 2 + (i % 4) / 2) as i32).collect();
    labels[0] = 3;
    let mask = LabelMask::new(4, 4, labels).unwrap();
    let majority = downsample_mask(&mask, 2, 2, Downsample::Majority).unwrap();
    assert_eq!(majority.labels, vec![0, 1, 2, 3]);
    let nearest = downsample_mask(&mask, 2, 2, Downsample::Nearest).unwrap();
    assert_eq!(nearest.labels, vec![0, 1, 2, 3]);
    let up = downsample_mask(&mask, 4, 4, Downsample::Nearest).unwrap();
    assert_eq!(up, mask);
}
