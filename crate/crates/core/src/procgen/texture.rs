use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ProcImage, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextureKind {
    ValueNoise,
    SineGrating,
    Voronoi,
    GradientBlend,
}

impl TextureKind {
    pub fn all() -> Vec<TextureKind> {
        vec![
            TextureKind::ValueNoise,
            TextureKind::SineGrating,
            TextureKind::Voronoi,
            TextureKind::GradientBlend,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TextureParams {
    /// Fractal value noise, independent per channel. Lattice spacing is
    /// `cell_size` pixels at the first octave and halves each octave.
    ValueNoise {
        cell_size: f64,
        octaves: u32,
        persistence: f64,
    },
    /// Two-color sinusoid. `frequency` is in cycles per image extent and
    /// `phase` in fractions of the extent.
    SineGrating {
        frequency: f64,
        angle: f64,
        phase: f64,
        color_a: [f32; 3],
        color_b: [f32; 3],
    },
    /// Nearest-site cells with random colors, darkened toward cell edges
    /// by `shading`.
    Voronoi { sites: u32, shading: f64 },
    /// Linear ramp between two colors across the image along `angle`.
    GradientBlend {
        angle: f64,
        color_a: [f32; 3],
        color_b: [f32; 3],
    },
}

impl TextureParams {
    pub fn kind(&self) -> TextureKind {
        match self {
            TextureParams::ValueNoise { .. } => TextureKind::ValueNoise,
            TextureParams::SineGrating { .. } => TextureKind::SineGrating,
            TextureParams::Voronoi { .. } => TextureKind::Voronoi,
            TextureParams::GradientBlend { .. } => TextureKind::GradientBlend,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        let color_ok = |c: &[f32; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        match self {
            TextureParams::ValueNoise {
                cell_size,
                octaves,
                persistence,
            } => {
                if !(cell_size.is_finite() && *cell_size >= 1.0) {
                    return bad(format!("value-noise cell_size {cell_size} must be >= 1"));
                }
                if !(1..=12).contains(octaves) {
                    return bad(format!("value-noise octaves {octaves} must be in 1..=12"));
                }
                if !(persistence.is_finite() && *persistence > 0.0) {
                    return bad(format!("value-noise persistence {persistence} must be positive"));
                }
            }
            TextureParams::SineGrating {
                frequency,
                angle,
                phase,
                color_a,
                color_b,
            } => {
                if !(frequency.is_finite() && *frequency >= 0.0) {
                    return bad(format!("grating frequency {frequency} must be >= 0"));
                }
                if !angle.is_finite() || !phase.is_finite() {
                    return bad("grating angle and phase must be finite".into());
                }
                if !color_ok(color_a) || !color_ok(color_b) {
                    return bad("grating colors must lie in [0, 1]".into());
                }
            }
            TextureParams::Voronoi { sites, shading } => {
                if *sites == 0 {
                    return bad("voronoi needs at least one site".into());
                }
                if !(0.0..=1.0).contains(shading) {
                    return bad(format!("voronoi shading {shading} must be in [0, 1]"));
                }
            }
            TextureParams::GradientBlend { angle, color_a, color_b } => {
                if !angle.is_finite() {
                    return bad("gradient angle must be finite".into());
                }
                if !color_ok(color_a) || !color_ok(color_b) {
                    return bad("gradient colors must lie in [0, 1]".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub params: TextureParams,
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
}

impl TextureSpec {
    /// Draws a kind from `kinds` and parameters for it, from `seed`.
    pub fn random(width: u32, height: u32, kinds: &[TextureKind], seed: u64) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::InvalidParam("no texture kinds to sample from".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = width.max(height) as f64;
        let params = match kinds[rng.random_range(0..kinds.len())] {
            TextureKind::ValueNoise => TextureParams::ValueNoise {
                cell_size: (extent * rng.random_range(0.03..0.3)).max(1.0),
                octaves: rng.random_range(1..=4),
                persistence: rng.random_range(0.3..0.7),
            },
            TextureKind::SineGrating => TextureParams::SineGrating {
                frequency: rng.random_range(1.0..12.0),
                angle: rng.random_range(0.0..PI),
                phase: rng.random::<f64>(),
                color_a: random_color(&mut rng),
                color_b: random_color(&mut rng),
            },
            TextureKind::Voronoi => TextureParams::Voronoi {
                sites: rng.random_range(4..=64),
                shading: rng.random_range(0.0..0.8),
            },
            TextureKind::GradientBlend => TextureParams::GradientBlend {
                angle: rng.random_range(0.0..2.0 * PI),
                color_a: random_color(&mut rng),
                color_b: random_color(&mut rng),
            },
        };
        Ok(Self { width, height, params })
    }
}

fn mix(a: [f32; 3], b: [f32; 3], t: f64) -> [f32; 3] {
    let mut out = [0.0f32; 3];
    for ch in 0..3 {
        let v = a[ch] as f64 + (b[ch] as f64 - a[ch] as f64) * t;
        out[ch] = v.clamp(0.0, 1.0) as f32;
    }
    out
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Renders a texture. Output depends only on `(spec, seed)`.
pub fn gen_texture(spec: &TextureSpec, seed: u64) -> Result<ProcImage> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidParam(format!(
            "texture size {}x{} is empty",
            spec.width, spec.height
        )));
    }
    spec.params.validate()?;
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut data = vec![0.0f32; w * h * 3];
    let extent = w.max(h) as f64;

    match &spec.params {
        TextureParams::ValueNoise {
            cell_size,
            octaves,
            persistence,
        } => {
            for ch in 0..3 {
                let mut acc = vec![0.0f64; w * h];
                let mut amp = 1.0;
                let mut total_amp = 0.0;
                for octave in 0..*octaves {
                    let cell = cell_size / f64::from(1u32 << octave);
                    let lw = (w as f64 / cell).ceil() as usize + 2;
                    let lh = (h as f64 / cell).ceil() as usize + 2;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (octave * 3 + ch as u32) as u64));
                    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
                    for y in 0..h {
                        let fy = (y as f64 + 0.5) / cell;
                        let (y0, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
                        for x in 0..w {
                            let fx = (x as f64 + 0.5) / cell;
                            let (x0, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
                            let at = |xx: usize, yy: usize| lattice[yy * lw + xx];
                            let top = at(x0, y0) + (at(x0 + 1, y0) - at(x0, y0)) * tx;
                            let bot = at(x0, y0 + 1) + (at(x0 + 1, y0 + 1) - at(x0, y0 + 1)) * tx;
                            acc[y * w + x] += amp * (top + (bot - top) * ty);
                        }
                    }
                    total_amp += amp;
                    amp *= persistence;
                }
                for (i, v) in acc.iter().enumerate() {
                    data[i * 3 + ch] = (v / total_amp).clamp(0.0, 1.0) as f32;
                }
            }
        }
        TextureParams::SineGrating {
            frequency,
            angle,
            phase,
            color_a,
            color_b,
        } => {
            let (s, c) = angle.sin_cos();
            for y in 0..h {
                for x in 0..w {
                    let t = ((x as f64 + 0.5) * c + (y as f64 + 0.5) * s) / extent;
                    let v = 0.5 + 0.5 * (2.0 * PI * frequency * (t + phase)).sin();
                    let px = mix(*color_a, *color_b, v);
                    data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&px);
                }
            }
        }
        TextureParams::Voronoi { sites, shading } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sites: Vec<([f64; 2], [f32; 3])> = (0..*sites)
                .map(|_| {
                    let pos = [rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64];
                    (pos, random_color(&mut rng))
                })
                .collect();
            let scale = ((w * h) as f64 / sites.len() as f64).sqrt();
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut best = (f64::INFINITY, 0usize);
                    for (i, (pos, _)) in sites.iter().enumerate() {
                        let d = (pos[0] - px).powi(2) + (pos[1] - py).powi(2);
                        if d < best.0 {
                            best = (d, i);
                        }
                    }
                    let darken = 1.0 - shading * (best.0.sqrt() / scale).min(1.0);
                    let color = sites[best.1].1;
                    for ch in 0..3 {
                        data[(y * w + x) * 3 + ch] = ((color[ch] as f64) * darken).clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
        TextureParams::GradientBlend { angle, color_a, color_b } => {
            let (s, c) = angle.sin_cos();
            // half the projected extent of the image onto the ramp direction
            let half = 0.5 * (w as f64 * c.abs() + h as f64 * s.abs());
            let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
            for y in 0..h {
                for x in 0..w {
                    let along = (x as f64 + 0.5 - cx) * c + (y as f64 + 0.5 - cy) * s;
                    let t = (0.5 + 0.5 * along / half).clamp(0.0, 1.0);
                    let px = mix(*color_a, *color_b, t);
                    data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&px);
                }
            }
        }
    }

    let provenance = Provenance {
        pipeline: "texture".into(),
        seed: Some(seed),
        params: serde_json::to_value(spec)?,
    };
    ProcImage::new(spec.width, spec.height, data, provenance)
}
