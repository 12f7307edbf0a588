use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use vismem_core::DEFAULT_K;

use crate::error::{usage, CliResult};

#[derive(Debug, Parser)]
#[command(name = "vismem", version, about = "Visual memory experiments from the command line")]
pub struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "VISMEM_THREADS")]
    pub threads: Option<usize>,

    /// Write the result table as CSV instead of the JSON report.
    #[arg(long, global = true)]
    pub csv: bool,

    /// Report destination; stdout when absent.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// Everything needed to reproduce a run. Embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Build a store from a raw f32 matrix and a label CSV.
    BuildMemory(BuildMemoryArgs),
    /// Predict labels for every record of a query store.
    Classify(ClassifyArgs),
    /// Top-1 accuracy of a labeled query store against a memory.
    Evaluate(ClassifyArgs),
    /// Two-alternative forced-choice alignment.
    #[command(name = "2afc")]
    #[serde(rename = "2afc")]
    TwoAfc(TwoAfcArgs),
    /// Leave-one-out privacy audit.
    Audit(AuditArgs),
    /// Write a copy of a store without the given records.
    Unlearn(UnlearnArgs),
    /// PCA projection of a patch grid, with optional R² against a mask.
    SegmentPca(SegmentPcaArgs),
    /// Threshold cosine similarity to a prompt prototype.
    SegmentIncontext(SegmentIncontextArgs),
    /// Label patches by KNN against a labeled patch memory.
    SegmentKnn(SegmentKnnArgs),
    /// Unsupervised K-Means over patches.
    SegmentKmeans(SegmentKmeansArgs),
    /// Generate a procedural dataset.
    Gen(GenArgs),
    /// Generate gestalt stimuli with ground-truth masks.
    Gestalt(GestaltArgs),
    /// Accuracy and privacy for several memories.
    Curve(CurveArgs),
    /// Regenerate a dataset from its manifest and compare.
    VerifyDataset(VerifyDatasetArgs),
    /// Re-run the configuration embedded in a report.
    #[serde(skip)]
    Rerun(RerunArgs),
}

fn positive_k(k: usize) -> CliResult<()> {
    if k == 0 {
        return Err(usage("k must be positive"));
    }
    Ok(())
}

fn distinct(out: &PathBuf, inputs: &[&PathBuf]) -> CliResult<()> {
    if inputs.iter().any(|p| *p == out) {
        return Err(usage(format!("output {} would overwrite an input", out.display())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BuildMemoryArgs {
    /// Little-endian f32 matrix, row-major, `dim` values per row.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub dim: usize,
    /// CSV with a header and a `label` column, optionally `id`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed class-name order, so stores built separately share label ids.
    #[arg(long, value_delimiter = ',')]
    pub class_names: Vec<String>,
    /// Keep vectors as given instead of L2-normalizing.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub memory: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(short, long, default_value_t = DEFAULT_K)]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TwoAfcArgs {
    /// JSON-lines trials: reference, option0, option1, human_choice.
    #[arg(long)]
    pub trials: PathBuf,
    /// Store resolving integer references.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub memory: PathBuf,
    /// Store whose vectors are the audit queries; labels are ignored.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(short, long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Rebuild the memory once per record instead of the top-(k+1) shortcut.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct UnlearnArgs {
    #[arg(long)]
    pub memory: PathBuf,
    /// Comma-separated record ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleArg {
    Nearest,
    Majority,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SegmentPcaArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Fit the components on these grids instead of the input grid alone.
    #[arg(long)]
    pub fit: Vec<PathBuf>,
    #[arg(short, long, default_value_t = 3)]
    pub components: usize,
    /// Ground-truth mask PNG for an R² score.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DownsampleArg::Nearest)]
    pub downsample: DownsampleArg,
    /// First three components as an RGB PNG.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SegmentIncontextArgs {
    #[arg(long)]
    pub prompt: PathBuf,
    /// Prompt mask PNG; cells labeled 1 form the prototype.
    #[arg(long)]
    pub prompt_mask: PathBuf,
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground truth for IoU of label 1.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DownsampleArg::Nearest)]
    pub downsample: DownsampleArg,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SegmentKnnArgs {
    #[arg(long)]
    pub query: PathBuf,
    /// Labeled store of patch embeddings.
    #[arg(long)]
    pub memory: PathBuf,
    #[arg(short, long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DownsampleArg::Nearest)]
    pub downsample: DownsampleArg,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SegmentKmeansArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(short, long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineArg {
    Texture,
    Kml,
    KmlMixup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleArg {
    Luminance,
    Random,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub pipeline: PipelineArg,
    #[arg(long)]
    pub count: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub width: u32,
    #[arg(long, default_value_t = 256)]
    pub height: u32,
    /// Clusters in the KML mask.
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long, value_enum, default_value_t = RuleArg::Luminance)]
    pub rule: RuleArg,
    /// Mixup Beta(alpha, alpha) parameter.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Fixed mixing weight instead of a Beta draw.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrincipleArg {
    Closure,
    Kanizsa,
    Connection,
    Continuity,
    Enclosure,
    Proximity,
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GestaltArgs {
    #[arg(long, value_enum)]
    pub principle: PrincipleArg,
    #[arg(long)]
    pub count: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub width: u32,
    #[arg(long, default_value_t = 256)]
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CurveArgs {
    /// `name=path`, repeated once per memory.
    #[arg(long = "memory", required = true)]
    pub memories: Vec<String>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(short, long, default_value_t = DEFAULT_K)]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct VerifyDatasetArgs {
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct RerunArgs {
    /// JSON report written by an earlier run.
    pub from: PathBuf,
}

/// Splits a `name=path` memory argument.
pub fn split_memory(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(usage(format!("memory {spec:?} is not name=path"))),
    }
}

impl Command {
    /// Checks arguments without touching the file system.
    pub fn validate(&self) -> CliResult<()> {
        match self {
            Command::BuildMemory(a) => {
                if a.dim == 0 {
                    return Err(usage("dim must be positive"));
                }
                let unique: std::collections::BTreeSet<&String> = a.class_names.iter().collect();
                if unique.len() != a.class_names.len() || a.class_names.iter().any(String::is_empty) {
                    return Err(usage("class names must be distinct and non-empty"));
                }
                distinct(&a.out, &[&a.embeddings, &a.labels])
            }
            Command::Classify(a) | Command::Evaluate(a) => positive_k(a.k),
            Command::TwoAfc(_) => Ok(()),
            Command::Audit(a) => positive_k(a.k),
            Command::Unlearn(a) => {
                if a.ids.is_empty() {
                    return Err(usage("no ids to remove"));
                }
                distinct(&a.out, &[&a.memory])
            }
            Command::SegmentPca(a) => {
                if a.components == 0 {
                    return Err(usage("components must be positive"));
                }
                Ok(())
            }
            Command::SegmentIncontext(a) => {
                if !a.threshold.is_finite() {
                    return Err(usage("threshold must be finite"));
                }
                Ok(())
            }
            Command::SegmentKnn(a) => positive_k(a.k),
            Command::SegmentKmeans(a) => {
                if a.k < 2 {
                    return Err(usage("segment-kmeans needs k >= 2"));
                }
                Ok(())
            }
            Command::Gen(a) => {
                if a.count == 0 || a.width == 0 || a.height == 0 {
                    return Err(usage("count, width and height must be positive"));
                }
                if a.clusters == 0 || a.restarts == 0 {
                    return Err(usage("clusters and restarts must be positive"));
                }
                if !(a.alpha.is_finite() && a.alpha > 0.0) {
                    return Err(usage("alpha must be positive"));
                }
                if a.lambda.is_some_and(|l| !(0.0..=1.0).contains(&l)) {
                    return Err(usage("lambda must lie in [0, 1]"));
                }
                Ok(())
            }
            Command::Gestalt(a) => {
                if a.count == 0 || a.width == 0 || a.height == 0 {
                    return Err(usage("count, width and height must be positive"));
                }
                Ok(())
            }
            Command::Curve(a) => {
                positive_k(a.k)?;
                let mut names = std::collections::BTreeSet::new();
                for m in &a.memories {
                    let (name, _) = split_memory(m)?;
                    if !names.insert(name.clone()) {
                        return Err(usage(format!("memory name {name} given twice")));
                    }
                }
                Ok(())
            }
            Command::VerifyDataset(_) | Command::Rerun(_) => Ok(()),
        }
    }
}
