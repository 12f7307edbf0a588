//! Seed-reproducible procedural imagery.
//!
//! Closed-form texture generators stand in for shader programs. On top of
//! them: K-Means RGB masks, KML compositing (cluster one source's colors,
//! then pick each pixel from one of two other sources by cluster), Mixup,
//! KML-Mixup, and gestalt stimuli with ground-truth grouping masks.
//!
//! Every sample is a pure function of its pipeline configuration and seed.
//! Datasets derive per-sample seeds from a master seed and the sample
//! index, so output does not depend on generation order.

mod dataset;
mod gestalt;
mod kml;
mod texture;

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::segmentation::LabelMask;

pub use dataset::{
    generate_dataset, read_manifest_rows, verify_dataset, write_dataset, DatasetOptions, ManifestRow,
    VerifyReport, MANIFEST_FILE,
};
pub use gestalt::{gen_gestalt, GestaltElement, GestaltParams, GestaltSpec, GestaltStimulus, Principle, Shape};
pub use kml::{
    kml_compose, kml_mixup_sample, kml_sample, kmeans_rgb, mixup, ClusterMask, KmlConfig, KmlMixupConfig,
    MixParams, SourceRule,
};
pub use texture::{gen_texture, TextureKind, TextureParams, TextureSpec};

pub const DEFAULT_RESOLUTION: u32 = 256;

/// Where an image came from, in enough detail to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pipeline: String,
    pub seed: Option<u64>,
    pub params: Value,
}

/// RGB raster with values in [0, 1], row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
    pub provenance: Provenance,
}

impl ProcImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>, provenance: Provenance) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!("image size {width}x{height} is empty")));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::Invariant(format!(
                "{width}x{height} RGB image needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invariant(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
            provenance,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> [f32; 3] {
        [self.data[index * 3], self.data[index * 3 + 1], self.data[index * 3 + 2]]
    }

    pub fn same_size(&self, other: &ProcImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width, self.height, bytes).expect("length checked at construction")
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    /// Loads an externally rendered image as a compositing source.
    pub fn from_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rgb = image::open(path)?.to_rgb8();
        let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        let provenance = Provenance {
            pipeline: "external".into(),
            seed: None,
            params: serde_json::json!({ "path": path.display().to_string() }),
        };
        Self::new(rgb.width(), rgb.height(), data, provenance)
    }
}

/// Float to byte: scale to [0, 255] and round half away from zero.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-stream seed from a master seed and an index (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A regenerable sample pipeline. Serialized with a `pipeline` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pipeline", rename_all = "kebab-case")]
pub enum PipelineConfig {
    /// One texture with fixed parameters.
    Texture(TextureSpec),
    /// One texture with kind and parameters drawn from the seed.
    RandomTexture {
        width: u32,
        height: u32,
        #[serde(default = "TextureKind::all")]
        kinds: Vec<TextureKind>,
    },
    Kml(KmlConfig),
    KmlMixup(KmlMixupConfig),
    Gestalt(GestaltSpec),
}

impl PipelineConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineConfig::Texture(_) => "texture",
            PipelineConfig::RandomTexture { .. } => "random-texture",
            PipelineConfig::Kml(_) => "kml",
            PipelineConfig::KmlMixup(_) => "kml-mixup",
            PipelineConfig::Gestalt(_) => "gestalt",
        }
    }

    /// Splits into the pipeline name and its parameter object.
    pub fn to_parts(&self) -> Result<(String, Value)> {
        let mut value = serde_json::to_value(self)?;
        let obj = value.as_object_mut().expect("tagged enum serializes to an object");
        let name = obj.remove("pipeline").and_then(|v| v.as_str().map(str::to_owned));
        Ok((name.expect("tag present"), value))
    }

    /// Inverse of [`PipelineConfig::to_parts`]. Unknown keys in `params`
    /// (such as realized values) are ignored.
    pub fn from_parts(pipeline: &str, params: &Value) -> Result<Self> {
        let mut obj = params
            .as_object()
            .cloned()
            .ok_or_else(|| Error::Format("pipeline params must be a JSON object".into()))?;
        obj.insert("pipeline".into(), Value::String(pipeline.into()));
        serde_json::from_value(Value::Object(obj))
            .map_err(|e| Error::Format(format!("cannot rebuild pipeline {pipeline}: {e}")))
    }
}

/// One generated image, plus a ground-truth mask for gestalt stimuli.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: u64,
    pub image: ProcImage,
    pub mask: Option<LabelMask>,
}

/// Runs a pipeline once. The image provenance records the configuration,
/// the seed and any realized random choices.
pub fn generate(config: &PipelineConfig, seed: u64) -> Result<(ProcImage, Option<LabelMask>)> {
    let (image, mask) = match config {
        PipelineConfig::Texture(spec) => (gen_texture(spec, seed)?, None),
        PipelineConfig::RandomTexture { width, height, kinds } => {
            let spec = TextureSpec::random(*width, *height, kinds, seed)?;
            (gen_texture(&spec, derive_seed(seed, 0))?, None)
        }
        PipelineConfig::Kml(cfg) => (kml_sample(cfg, seed)?, None),
        PipelineConfig::KmlMixup(cfg) => (kml_mixup_sample(cfg, seed)?, None),
        PipelineConfig::Gestalt(spec) => {
            let stim = gen_gestalt(spec, seed)?;
            (stim.image, Some(stim.mask))
        }
    };
    // uniform provenance: config params plus whatever the generator realized
    let (pipeline, mut params) = config.to_parts()?;
    let realized = image.provenance.params.clone();
    params
        .as_object_mut()
        .expect("object")
        .insert("realized".into(), realized);
    let image = ProcImage {
        provenance: Provenance {
            pipeline,
            seed: Some(seed),
            params,
        },
        ..image
    };
    Ok((image, mask))
}

/// Rebuilds an image from its provenance.
pub fn regenerate(provenance: &Provenance) -> Result<(ProcImage, Option<LabelMask>)> {
    let seed = provenance
        .seed
        .ok_or_else(|| Error::Format(format!("{} sample has no seed", provenance.pipeline)))?;
    let config = PipelineConfig::from_parts(&provenance.pipeline, &provenance.params)?;
    generate(&config, seed)
}
