use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::texture::{gen_texture, TextureKind, TextureSpec};
use super::{derive_seed, ProcImage, Provenance, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_restarts, KMeansFit, KMeansParams, DEFAULT_RESTARTS};

/// Per-pixel cluster ids from K-Means in RGB space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMask {
    pub width: u32,
    pub height: u32,
    /// Clusters actually used; below the request when the image has fewer
    /// distinct colors.
    pub k: usize,
    pub assignment: Vec<u32>,
    pub centroids: Vec<[f64; 3]>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
    pub converged: bool,
    pub reduced: bool,
}

impl ClusterMask {
    fn from_fit(width: u32, height: u32, fit: KMeansFit) -> Self {
        let centroids = fit.centroids.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self {
            width,
            height,
            k: fit.k(),
            assignment: fit.assignment.iter().map(|&c| c as u32).collect(),
            centroids,
            inertia: fit.inertia,
            inertia_history: fit.inertia_history,
            converged: fit.converged,
            reduced: fit.reduced,
        }
    }
}

/// Clusters the pixel colors of `image` into `params.k` groups.
pub fn kmeans_rgb(image: &ProcImage, params: &KMeansParams, seed: u64) -> Result<ClusterMask> {
    let k = params.k;
    if k > image.pixels() {
        return Err(Error::InvalidParam(format!(
            "{k} clusters requested for {} pixels",
            image.pixels()
        )));
    }
    let data: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let fit = kmeans_restarts(&data, 3, params, seed)?;
    Ok(ClusterMask::from_fit(image.width(), image.height(), fit))
}

/// How clusters of the mask image are mapped onto the two sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceRule {
    /// Rank clusters by centroid luminance; even ranks take the second
    /// source, odd ranks the third.
    #[default]
    Luminance,
    /// Each cluster picks a source with a fair coin from the seed.
    Random,
}

fn luminance(c: &[f64; 3]) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

/// Source (0 = second image, 1 = third image) for each cluster id.
fn cluster_sources(mask: &ClusterMask, rule: SourceRule, seed: u64) -> Vec<u8> {
    match rule {
        SourceRule::Luminance => {
            let mut order: Vec<usize> = (0..mask.k).collect();
            order.sort_by(|&a, &b| {
                luminance(&mask.centroids[a])
                    .total_cmp(&luminance(&mask.centroids[b]))
                    .then(a.cmp(&b))
            });
            let mut sources = vec![0u8; mask.k];
            for (rank, &cluster) in order.iter().enumerate() {
                sources[cluster] = (rank % 2) as u8;
            }
            sources
        }
        SourceRule::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..mask.k).map(|_| rng.random_range(0..2u8)).collect()
        }
    }
}

/// KML compositing: cluster `s1`'s colors into a mask, then copy each pixel
/// from `s2` or `s3` according to its cluster's assigned source.
pub fn kml_compose(
    s1: &ProcImage,
    s2: &ProcImage,
    s3: &ProcImage,
    params: &KMeansParams,
    seed: u64,
    rule: SourceRule,
) -> Result<ProcImage> {
    if !s1.same_size(s2) || !s1.same_size(s3) {
        return Err(Error::DimensionMismatch {
            expected: s1.pixels(),
            found: if s1.same_size(s2) { s3.pixels() } else { s2.pixels() },
        });
    }
    let mask = kmeans_rgb(s1, params, derive_seed(seed, 0))?;
    let sources = cluster_sources(&mask, rule, derive_seed(seed, 1));
    let mut data = Vec::with_capacity(s1.data().len());
    for (i, &cluster) in mask.assignment.iter().enumerate() {
        let src = if sources[cluster as usize] == 0 { s2 } else { s3 };
        data.extend_from_slice(&src.data()[i * 3..i * 3 + 3]);
    }
    let provenance = Provenance {
        pipeline: "kml-compose".into(),
        seed: Some(seed),
        params: json!({
            "k": params.k,
            "effective_k": mask.k,
            "rule": rule,
            "max_iters": params.max_iters,
            "restarts": params.restarts,
            "cluster_sources": sources,
            "inertia": mask.inertia,
            "sources": [&s1.provenance, &s2.provenance, &s3.provenance],
        }),
    };
    ProcImage::new(s1.width(), s1.height(), data, provenance)
}

/// Mixup weight and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixParams {
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl MixParams {
    /// Draws `lambda ~ Beta(alpha, alpha)` from a ChaCha8 stream seeded
    /// with `seed`.
    pub fn sample(alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParam(format!("alpha {alpha} must be positive")));
        }
        let beta = Beta::new(alpha, alpha)
            .map_err(|e| Error::InvalidParam(format!("Beta({alpha}, {alpha}): {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = beta.sample(&mut rng).clamp(0.0, 1.0);
        Ok(Self { alpha, lambda, seed })
    }

    pub fn fixed(alpha: f64, lambda: f64, seed: u64) -> Self {
        Self { alpha, lambda, seed }
    }
}

/// Pixelwise `lambda * a + (1 - lambda) * b`.
pub fn mixup(a: &ProcImage, b: &ProcImage, params: &MixParams) -> Result<ProcImage> {
    if !a.same_size(b) {
        return Err(Error::DimensionMismatch {
            expected: a.pixels(),
            found: b.pixels(),
        });
    }
    let lambda = params.lambda;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParam(format!("mixing weight {lambda} outside [0, 1]")));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let v = (lambda * x as f64 + (1.0 - lambda) * y as f64) as f32;
            // rounding must not leave the segment between the inputs
            v.clamp(x.min(y), x.max(y))
        })
        .collect();
    let provenance = Provenance {
        pipeline: "mixup".into(),
        seed: Some(params.seed),
        params: json!({
            "alpha": params.alpha,
            "lambda": lambda,
            "sources": [&a.provenance, &b.provenance],
        }),
    };
    ProcImage::new(a.width(), a.height(), data, provenance)
}

fn default_k() -> usize {
    2
}

fn default_max_iters() -> usize {
    50
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

fn default_resolution() -> u32 {
    DEFAULT_RESOLUTION
}

/// Configuration of one KML sample drawn from built-in textures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmlConfig {
    #[serde(default = "default_resolution")]
    pub width: u32,
    #[serde(default = "default_resolution")]
    pub height: u32,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub rule: SourceRule,
    #[serde(default = "TextureKind::all")]
    pub kinds: Vec<TextureKind>,
}

impl Default for KmlConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
            k: default_k(),
            max_iters: default_max_iters(),
            restarts: default_restarts(),
            rule: SourceRule::default(),
            kinds: TextureKind::all(),
        }
    }
}

impl KmlConfig {
    pub fn with_size(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            k: self.k,
            max_iters: self.max_iters,
            restarts: self.restarts,
        }
    }
}

/// Draws three random textures from `seed` and composites them.
pub fn kml_sample(config: &KmlConfig, seed: u64) -> Result<ProcImage> {
    let mut sources = Vec::with_capacity(3);
    for i in 0..3 {
        let spec = TextureSpec::random(config.width, config.height, &config.kinds, derive_seed(seed, 2 * i))?;
        sources.push(gen_texture(&spec, derive_seed(seed, 2 * i + 1))?);
    }
    kml_compose(
        &sources[0],
        &sources[1],
        &sources[2],
        &config.kmeans_params(),
        derive_seed(seed, 6),
        config.rule,
    )
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmlMixupConfig {
    #[serde(flatten)]
    pub kml: KmlConfig,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fixes the mixing weight instead of sampling it.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl Default for KmlMixupConfig {
    fn default() -> Self {
        Self {
            kml: KmlConfig::default(),
            alpha: default_alpha(),
            lambda: None,
        }
    }
}

/// Mixup of two independent KML samples.
pub fn kml_mixup_sample(config: &KmlMixupConfig, seed: u64) -> Result<ProcImage> {
    let a = kml_sample(&config.kml, derive_seed(seed, 0))?;
    let b = kml_sample(&config.kml, derive_seed(seed, 1))?;
    let mix_seed = derive_seed(seed, 2);
    let params = match config.lambda {
        Some(lambda) => MixParams::fixed(config.alpha, lambda, mix_seed),
        None => MixParams::sample(config.alpha, mix_seed)?,
    };
    mixup(&a, &b, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn params(k: usize, max_iters: usize) -> KMeansParams {
        KMeansParams {
            max_iters,
            ..KMeansParams::new(k)
        }
    }

    fn solid(width: u32, height: u32, f: impl Fn(usize) -> [f32; 3]) -> ProcImage {
        let data = (0..(width * height) as usize).flat_map(f).collect();
        let prov = Provenance {
            pipeline: "test".into(),
            seed: None,
            params: Value::Null,
        };
        ProcImage::new(width, height, data, prov).unwrap()
    }

    #[test]
    fn red_blue_halves() {
        let img = solid(8, 4, |i| if i % 8 < 4 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] });
        let mask = kmeans_rgb(&img, &params(2, 20), 3).unwrap();
        assert_eq!(mask.inertia, 0.0);
        for (i, &c) in mask.assignment.iter().enumerate() {
            assert_eq!(c, mask.assignment[if i % 8 < 4 { 0 } else { 7 }]);
        }
        assert_ne!(mask.assignment[0], mask.assignment[7]);
    }

    #[test]
    fn one_cluster_centroid_is_mean() {
        let img = solid(2, 2, |i| [i as f32 * 0.25, 0.5, 1.0 - i as f32 * 0.25]);
        let mask = kmeans_rgb(&img, &params(1, 10), 0).unwrap();
        let c = mask.centroids[0];
        assert!((c[0] - 0.375).abs() < 1e-7 && (c[1] - 0.5).abs() < 1e-7 && (c[2] - 0.625).abs() < 1e-7);
        assert!(kmeans_rgb(&img, &params(5, 10), 0).is_err());
    }

    #[test]
    fn monochrome_mask_takes_cluster_zero_source() {
        let s1 = solid(4, 4, |_| [0.3, 0.3, 0.3]);
        let s2 = solid(4, 4, |i| [i as f32 / 16.0, 0.0, 0.0]);
        let s3 = solid(4, 4, |_| [0.0, 1.0, 0.0]);
        let out = kml_compose(&s1, &s2, &s3, &params(2, 10), 9, SourceRule::Luminance).unwrap();
        assert_eq!(out.data(), s2.data());
        assert_eq!(out.provenance.params["effective_k"], 1);
    }

    #[test]
    fn identical_sources_pass_through() {
        let s1 = solid(6, 3, |i| [(i % 3) as f32 / 2.0, 0.1, 0.9]);
        let s2 = solid(6, 3, |i| [0.2, (i % 5) as f32 / 4.0, 0.4]);
        let out = kml_compose(&s1, &s2, &s2.clone(), &params(3, 10), 1, SourceRule::Random).unwrap();
        assert_eq!(out.data(), s2.data());
    }

    #[test]
    fn luminance_rule_alternates() {
        let mut mask = ClusterMask {
            width: 1,
            height: 1,
            k: 3,
            assignment: vec![0],
            centroids: vec![[0.9, 0.9, 0.9], [0.1, 0.1, 0.1], [0.5, 0.5, 0.5]],
            inertia: 0.0,
            inertia_history: vec![0.0],
            converged: true,
            reduced: false,
        };
        // ranks: cluster 1 -> 0, cluster 2 -> 1, cluster 0 -> 2
        assert_eq!(cluster_sources(&mask, SourceRule::Luminance, 0), vec![0, 0, 1]);
        mask.k = 1;
        mask.centroids.truncate(1);
        assert_eq!(cluster_sources(&mask, SourceRule::Luminance, 0), vec![0]);
    }

    #[test]
    fn mixup_identities() {
        let a = solid(3, 2, |i| [i as f32 / 6.0, 0.3, 0.7]);
        let b = solid(3, 2, |i| [1.0 - i as f32 / 6.0, 0.9, 0.2]);
        assert_eq!(mixup(&a, &b, &MixParams::fixed(1.0, 1.0, 0)).unwrap().data(), a.data());
        assert_eq!(mixup(&a, &b, &MixParams::fixed(1.0, 0.0, 0)).unwrap().data(), b.data());
        let zeros = solid(2, 2, |_| [0.0; 3]);
        let ones = solid(2, 2, |_| [1.0; 3]);
        let mid = mixup(&zeros, &ones, &MixParams::fixed(1.0, 0.5, 0)).unwrap();
        assert!(mid.data().iter().all(|&v| v == 0.5));
        assert!(mixup(&a, &zeros, &MixParams::fixed(1.0, 0.5, 0)).is_err());
        assert!(mixup(&a, &b, &MixParams::fixed(1.0, 1.5, 0)).is_err());
    }

    #[test]
    fn beta_sampling() {
        let p = MixParams::sample(1.0, 5).unwrap();
        assert!((0.0..=1.0).contains(&p.lambda));
        assert_eq!(p, MixParams::sample(1.0, 5).unwrap());
        assert!(MixParams::sample(0.0, 5).is_err());
        assert!(MixParams::sample(-1.0, 5).is_err());
        // large alpha concentrates near one half
        let mean: f64 = (0..200).map(|s| MixParams::sample(500.0, s).unwrap().lambda).sum::<f64>() / 200.0;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn forced_half_is_average_of_kml_pair() {
        let cfg = KmlMixupConfig {
            kml: KmlConfig::with_size(24, 16),
            alpha: 1.0,
            lambda: Some(0.5),
        };
        let out = kml_mixup_sample(&cfg, 21).unwrap();
        let a = kml_sample(&cfg.kml, derive_seed(21, 0)).unwrap();
        let b = kml_sample(&cfg.kml, derive_seed(21, 1)).unwrap();
        for ((o, x), y) in out.data().iter().zip(a.data()).zip(b.data()) {
            assert!((o - (x + y) / 2.0).abs() < 1e-6);
        }
        assert_eq!(out, kml_mixup_sample(&cfg, 21).unwrap());
    }
}
