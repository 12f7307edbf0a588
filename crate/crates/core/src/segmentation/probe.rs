use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LabelMask;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_restarts, KMeansFit, KMeansParams};
use crate::knn::{classify, cosine_similarity};
use crate::store::{l2_norm, EmbeddingStore, PatchGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InContextResult {
    /// 1 where similarity reaches the threshold, else 0.
    pub mask: LabelMask,
    pub threshold: f64,
    /// Cosine similarity of each query patch with the prototype built by
    /// averaging L2-normalized prompt patches.
    pub similarity: Vec<f64>,
    /// Same, with the prototype built by averaging raw prompt patches.
    pub similarity_raw_mean: Vec<f64>,
}

/// Segments `query` by cosine similarity to a prototype pooled from the
/// prompt patches inside `prompt_mask` (cells labeled 1).
pub fn in_context_segment(
    prompt: &PatchGrid,
    prompt_mask: &LabelMask,
    query: &PatchGrid,
    threshold: f64,
) -> Result<InContextResult> {
    if prompt.dim() != query.dim() {
        return Err(Error::DimensionMismatch {
            expected: prompt.dim(),
            found: query.dim(),
        });
    }
    if prompt_mask.rows != prompt.rows() || prompt_mask.cols != prompt.cols() {
        return Err(Error::InvalidParam(format!(
            "prompt mask is {}x{} but prompt grid is {}x{}",
            prompt_mask.rows,
            prompt_mask.cols,
            prompt.rows(),
            prompt.cols()
        )));
    }
    let d = prompt.dim();
    let mut normalized_sum = vec![0.0f64; d];
    let mut raw_sum = vec![0.0f64; d];
    let mut count = 0usize;
    for (i, patch) in prompt.iter_patches().enumerate() {
        if prompt_mask.labels[i] != 1 {
            continue;
        }
        let norm = l2_norm(patch);
        if norm == 0.0 {
            return Err(Error::ZeroNormInput(format!("prompt patch {i}")));
        }
        for ((n, r), &x) in normalized_sum.iter_mut().zip(raw_sum.iter_mut()).zip(patch) {
            *n += x as f64 / norm;
            *r += x as f64;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidParam("prompt mask has no positive cells".into()));
    }
    let to_f32 = |v: &[f64]| v.iter().map(|&x| (x / count as f64) as f32).collect::<Vec<f32>>();
    let prototype = to_f32(&normalized_sum);
    let raw_prototype = to_f32(&raw_sum);

    let mut similarity = Vec::with_capacity(query.cells());
    let mut similarity_raw_mean = Vec::with_capacity(query.cells());
    for (i, patch) in query.iter_patches().enumerate() {
        let zero = || Error::ZeroNormInput(format!("query patch {i} or prototype"));
        similarity.push(cosine_similarity(patch, &prototype).ok_or_else(zero)?);
        similarity_raw_mean.push(cosine_similarity(patch, &raw_prototype).ok_or_else(zero)?);
    }
    let labels = similarity.iter().map(|&s| i32::from(s >= threshold)).collect();
    Ok(InContextResult {
        mask: LabelMask::new(query.rows(), query.cols(), labels)?,
        threshold,
        similarity,
        similarity_raw_mean,
    })
}

/// Labels each query patch by KNN majority vote against a labeled patch
/// memory.
pub fn knn_segment(query: &PatchGrid, patch_memory: &EmbeddingStore, k: usize) -> Result<LabelMask> {
    if query.dim() != patch_memory.dim() {
        return Err(Error::DimensionMismatch {
            expected: patch_memory.dim(),
            found: query.dim(),
        });
    }
    let labels: Vec<i32> = (0..query.cells())
        .into_par_iter()
        .map(|i| {
            let p = classify(patch_memory, query.cell(i), k)?;
            i32::try_from(p.label).map_err(|_| Error::Invariant(format!("label {} too large for a mask", p.label)))
        })
        .collect::<Result<_>>()?;
    LabelMask::new(query.rows(), query.cols(), labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansSegmentation {
    /// Cluster id per patch.
    pub mask: LabelMask,
    pub fit: KMeansFit,
}

/// Hard-label unsupervised segmentation: K-Means over the patch vectors.
pub fn kmeans_segment(query: &PatchGrid, k: usize, seed: u64) -> Result<KMeansSegmentation> {
    if k < 2 {
        return Err(Error::InvalidParam(format!("need at least 2 clusters, got {k}")));
    }
    if k > query.cells() {
        return Err(Error::InvalidParam(format!(
            "{k} clusters requested for {} patches",
            query.cells()
        )));
    }
    let data: Vec<f64> = query.as_slice().iter().map(|&x| x as f64).collect();
    let fit = kmeans_restarts(&data, query.dim(), &KMeansParams::new(k), seed)?;
    let labels = fit.assignment.iter().map(|&c| c as i32).collect();
    Ok(KMeansSegmentation {
        mask: LabelMask::new(query.rows(), query.cols(), labels)?,
        fit,
    })
}
