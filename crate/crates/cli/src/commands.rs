use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::Context;
use serde_json::{json, Value};
use vismem_core::afc::{parse_trial_manifest, resolve_trials, two_afc_alignment, two_afc_judge, EmbeddingRef};
use vismem_core::governance::{curve_to_csv, privacy_accuracy_curve};
use vismem_core::knn::{classify_many, evaluate_classification};
use vismem_core::procgen::{
    generate_dataset, verify_dataset, write_dataset, DatasetOptions, GestaltSpec, KmlConfig, KmlMixupConfig,
    PipelineConfig, Principle, ProcImage, Provenance, SourceRule, TextureKind, MANIFEST_FILE,
};
use vismem_core::segmentation::{
    feature_rgb, fit_pca_grids, in_context_segment, kmeans_segment, knn_segment, project_grid, r2_score,
    write_mask_png, LabelMask, IGNORE,
};
use vismem_core::store::{l2_normalize, write_store_with_manifest};
use vismem_core::{audit_privacy_fast, audit_privacy_naive, EmbeddingStore, MemoryHandle};

use crate::args::*;
use crate::error::{format_error, invariant, usage, CliResult};
use crate::input::{build_store, load_grid, load_mask_for, load_store, read_f32s, read_labels, read_matrix};
use crate::report::{scalar_csv, Outcome};

pub fn run(config: &RunConfig) -> CliResult<Outcome> {
    let seed = config.seed;
    let outcome = match &config.command {
        Command::BuildMemory(a) => build_memory(a)?,
        Command::Classify(a) => classify(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::TwoAfc(a) => two_afc(a)?,
        Command::Audit(a) => audit(a)?,
        Command::Unlearn(a) => unlearn(a)?,
        Command::SegmentPca(a) => segment_pca(a)?,
        Command::SegmentIncontext(a) => segment_incontext(a)?,
        Command::SegmentKnn(a) => segment_knn(a)?,
        Command::SegmentKmeans(a) => segment_kmeans(a, seed)?,
        Command::Gen(a) => gen(a, seed)?,
        Command::Gestalt(a) => gestalt(a, seed)?,
        Command::Curve(a) => curve(a)?,
        Command::VerifyDataset(a) => verify(a)?,
        Command::Rerun(_) => return Err(usage("a report cannot re-run another rerun")),
    };
    Ok(match outcome.csv {
        Some(_) => outcome,
        None => {
            let csv = scalar_csv(&outcome.result);
            outcome.with_csv(csv)
        }
    })
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn build_memory(a: &BuildMemoryArgs) -> CliResult<Outcome> {
    let vectors = read_matrix(&a.embeddings, a.dim)?;
    let table = read_labels(&a.labels, &a.class_names)?;
    if vectors.len() != table.ids.len() {
        return Err(format_error(format!(
            "embeddings {} hold {} rows but labels {} hold {} rows",
            a.embeddings.display(),
            vectors.len(),
            a.labels.display(),
            table.ids.len()
        )));
    }
    let mut store = build_store(vectors, table, a.dim)?;
    if !a.no_normalize {
        store = l2_normalize(&store)?;
    }
    write_store_with_manifest(&store, &a.out, Some(path_str(&a.embeddings)), None)
        .with_context(|| format!("writing store {}", a.out.display()))?;
    Outcome::new(json!({
        "out": a.out,
        "records": store.len(),
        "dim": store.dim(),
        "labeled": store.records().iter().filter(|r| r.label.is_some()).count(),
        "normalized": store.is_normalized(),
        "class_names": store.class_names(),
    }))
}

fn vectors(store: &EmbeddingStore) -> Vec<Vec<f32>> {
    store.records().iter().map(|r| r.vector.clone()).collect()
}

fn classify(a: &ClassifyArgs) -> CliResult<Outcome> {
    let memory = load_store(&a.memory)?;
    let queries = load_store(&a.queries)?;
    let predictions = classify_many(&memory, &vectors(&queries), a.k)?;
    let mut csv = String::from("query_id,label,margin,clamped\n");
    let rows: Vec<Value> = queries
        .records()
        .iter()
        .zip(&predictions)
        .map(|(q, p)| {
            csv.push_str(&format!("{},{},{},{}\n", q.id, p.label, p.margin, p.clamped));
            let mut row = serde_json::to_value(p).expect("prediction serializes");
            row["query_id"] = json!(q.id);
            row
        })
        .collect();
    Ok(Outcome::new(json!({
        "k": a.k,
        "memory_size": memory.len(),
        "queries": queries.len(),
        "predictions": rows,
    }))?
    .with_csv(csv))
}

fn evaluate(a: &ClassifyArgs) -> CliResult<Outcome> {
    let memory = load_store(&a.memory)?;
    let queries = load_store(&a.queries)?;
    let report = evaluate_classification(&memory, &queries, a.k)?;
    let csv = report.to_csv();
    Ok(Outcome::new(report)?.with_csv(csv))
}

fn two_afc(a: &TwoAfcArgs) -> CliResult<Outcome> {
    let file = File::open(&a.trials).with_context(|| format!("reading trials {}", a.trials.display()))?;
    let specs = parse_trial_manifest(BufReader::new(file))?;
    let store = a.store.as_deref().map(load_store).transpose()?;
    let base = a.trials.parent().unwrap_or(Path::new("."));
    let trials = resolve_trials(&specs, |r| match r {
        EmbeddingRef::Inline(v) => Ok(v.clone()),
        EmbeddingRef::Id(id) => {
            let store = store
                .as_ref()
                .ok_or_else(|| vismem_core::Error::InvalidParam(format!("reference to id {id} needs --store")))?;
            store
                .get(*id)
                .map(|rec| rec.vector.clone())
                .ok_or_else(|| vismem_core::Error::UnknownIds(vec![*id]))
        }
        EmbeddingRef::Path(p) => read_f32s(&base.join(p))
            .map_err(|e| vismem_core::Error::Format(format!("{e:#}"))),
    })?;
    let judged: Vec<u8> = trials.iter().map(two_afc_judge).collect::<Result<_, _>>()?;
    let alignment = if !trials.is_empty() && trials.iter().all(|t| t.human_choice.is_some()) {
        Some(two_afc_alignment(&trials)?)
    } else {
        None
    };
    let mut csv = String::from("trial,judged,human\n");
    for (i, (t, j)) in trials.iter().zip(&judged).enumerate() {
        let human = t.human_choice.map(|h| h.to_string()).unwrap_or_default();
        csv.push_str(&format!("{i},{j},{human}\n"));
    }
    Ok(Outcome::new(json!({
        "trials": trials.len(),
        "judged": judged,
        "alignment": alignment,
    }))?
    .with_csv(csv))
}

fn audit(a: &AuditArgs) -> CliResult<Outcome> {
    let memory = MemoryHandle::new(load_store(&a.memory)?);
    let queries = vectors(&load_store(&a.queries)?);
    let report = if a.naive {
        audit_privacy_naive(&memory, &queries, a.k)?
    } else {
        audit_privacy_fast(&memory, &queries, a.k)?
    };
    let mut csv = String::from("id,affected_queries\n");
    for (id, qs) in &report.affected {
        let list: Vec<String> = qs.iter().map(u64::to_string).collect();
        csv.push_str(&format!("{id},{}\n", list.join(";")));
    }
    Ok(Outcome::new(json!({
        "method": if a.naive { "naive" } else { "fast" },
        "memory_size": memory.store().len(),
        "queries": queries.len(),
        "k": report.k,
        "fraction_non_private": report.fraction_non_private,
        "non_private_ids": report.non_private_ids,
        "affected": report.affected,
    }))?
    .with_csv(csv))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn unlearn(a: &UnlearnArgs) -> CliResult<Outcome> {
    if same_file(&a.memory, &a.out) {
        return Err(usage(format!("output {} is the input store", a.out.display())));
    }
    let memory = MemoryHandle::new(load_store(&a.memory)?);
    let ids: BTreeSet<u64> = a.ids.iter().copied().collect();
    let after = memory.remove_records(&ids)?;
    write_store_with_manifest(after.store(), &a.out, Some(path_str(&a.memory)), None)
        .with_context(|| format!("writing store {}", a.out.display()))?;
    Outcome::new(json!({
        "memory": a.memory,
        "out": a.out,
        "removed": ids,
        "before": memory.store().len(),
        "remaining": after.store().len(),
        "generation": after.generation(),
    }))
}

fn write_rgb_png(rows: usize, cols: usize, rgb: &[u8], path: &Path, source: &Path) -> CliResult<()> {
    let data = rgb.iter().map(|&b| f32::from(b) / 255.0).collect();
    let provenance = Provenance {
        pipeline: "pca-rgb".into(),
        seed: None,
        params: json!({ "grid": source }),
    };
    ProcImage::new(cols as u32, rows as u32, data, provenance)?.write_png(path)?;
    Ok(())
}

fn segment_pca(a: &SegmentPcaArgs) -> CliResult<Outcome> {
    let grid = load_grid(&a.grid)?;
    let fit_grids = a.fit.iter().map(|p| load_grid(p)).collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<_> = if fit_grids.is_empty() {
        vec![&grid]
    } else {
        fit_grids.iter().collect()
    };
    let model = fit_pca_grids(&refs, a.components)?;
    let features = project_grid(&model, &grid)?;
    let r2 = match &a.mask {
        Some(p) => Some(r2_score(&features, &load_mask_for(p, grid.rows(), grid.cols(), a.downsample)?)?),
        None => None,
    };
    if let Some(png) = &a.png {
        write_rgb_png(grid.rows(), grid.cols(), &feature_rgb(&features), png, &a.grid)?;
    }
    let explained: f64 = model.explained_variance.iter().sum();
    Outcome::new(json!({
        "rows": grid.rows(),
        "cols": grid.cols(),
        "components": model.n_components(),
        "fit_patches": model.samples,
        "explained_variance": model.explained_variance,
        "total_variance": model.total_variance,
        "explained_ratio": if model.total_variance > 0.0 { explained / model.total_variance } else { 0.0 },
        "r2": r2.as_ref().map(|r| r.r2),
        "r2_report": r2,
    }))
}

fn write_mask(mask: &LabelMask, out: Option<&Path>) -> CliResult<()> {
    if let Some(path) = out {
        write_mask_png(mask, path).with_context(|| format!("writing mask {}", path.display()))?;
    }
    Ok(())
}

fn segment_incontext(a: &SegmentIncontextArgs) -> CliResult<Outcome> {
    let prompt = load_grid(&a.prompt)?;
    let prompt_mask = load_mask_for(&a.prompt_mask, prompt.rows(), prompt.cols(), a.downsample)?;
    let query = load_grid(&a.query)?;
    let result = in_context_segment(&prompt, &prompt_mask, &query, a.threshold)?;
    write_mask(&result.mask, a.out.as_deref())?;
    let iou = match &a.truth {
        Some(p) => load_mask_for(p, query.rows(), query.cols(), a.downsample)?.iou(&result.mask, 1),
        None => None,
    };
    Outcome::new(json!({
        "threshold": result.threshold,
        "cells": result.mask.labels.len(),
        "positive_cells": result.mask.labels.iter().filter(|&&l| l == 1).count(),
        "iou": iou,
        "similarity": result.similarity,
        "similarity_raw_mean": result.similarity_raw_mean,
    }))
}

/// Pixel accuracy and mean IoU over the classes present in `truth`.
fn mask_scores(predicted: &LabelMask, truth: &LabelMask) -> (Option<f64>, Option<f64>) {
    let scored: Vec<(i32, i32)> = predicted
        .labels
        .iter()
        .zip(&truth.labels)
        .filter(|(_, &t)| t != IGNORE)
        .map(|(&p, &t)| (p, t))
        .collect();
    if scored.is_empty() {
        return (None, None);
    }
    let accuracy = scored.iter().filter(|(p, t)| p == t).count() as f64 / scored.len() as f64;
    let ious: Vec<f64> = truth.classes().iter().filter_map(|&c| predicted.iou(truth, c)).collect();
    let mean_iou = ious.iter().sum::<f64>() / ious.len() as f64;
    (Some(accuracy), Some(mean_iou))
}

fn histogram(mask: &LabelMask) -> BTreeMap<i32, usize> {
    let mut counts = BTreeMap::new();
    for &l in &mask.labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
}

fn segment_knn(a: &SegmentKnnArgs) -> CliResult<Outcome> {
    let query = load_grid(&a.query)?;
    let memory = load_store(&a.memory)?;
    let mask = knn_segment(&query, &memory, a.k)?;
    write_mask(&mask, a.out.as_deref())?;
    let (accuracy, mean_iou) = match &a.truth {
        Some(p) => mask_scores(&mask, &load_mask_for(p, query.rows(), query.cols(), a.downsample)?),
        None => (None, None),
    };
    Outcome::new(json!({
        "k": a.k,
        "rows": mask.rows,
        "cols": mask.cols,
        "label_counts": histogram(&mask),
        "pixel_accuracy": accuracy,
        "mean_iou": mean_iou,
        "labels": mask.labels,
    }))
}

fn segment_kmeans(a: &SegmentKmeansArgs, seed: u64) -> CliResult<Outcome> {
    let query = load_grid(&a.query)?;
    let seg = kmeans_segment(&query, a.k, seed)?;
    write_mask(&seg.mask, a.out.as_deref())?;
    Outcome::new(json!({
        "k": seg.fit.k(),
        "inertia": seg.fit.inertia,
        "iterations": seg.fit.iterations,
        "converged": seg.fit.converged,
        "reduced": seg.fit.reduced,
        "cluster_sizes": histogram(&seg.mask),
        "labels": seg.mask.labels,
    }))
}

fn write_samples(config: &PipelineConfig, seed: u64, count: u64, out: &Path) -> CliResult<Outcome> {
    let samples = generate_dataset(config, seed, count)?;
    let rows = write_dataset(&samples, out, DatasetOptions::default())
        .with_context(|| format!("writing dataset {}", out.display()))?;
    let (pipeline, params) = config.to_parts()?;
    Outcome::new(json!({
        "out": out,
        "manifest": out.join(MANIFEST_FILE),
        "count": rows.len(),
        "pipeline": pipeline,
        "params": params,
        "masks": rows.iter().filter(|r| r.mask.is_some()).count(),
    }))
}

fn gen(a: &GenArgs, seed: u64) -> CliResult<Outcome> {
    let kml = KmlConfig {
        width: a.width,
        height: a.height,
        k: a.clusters,
        max_iters: a.max_iters,
        restarts: a.restarts,
        rule: match a.rule {
            RuleArg::Luminance => SourceRule::Luminance,
            RuleArg::Random => SourceRule::Random,
        },
        kinds: TextureKind::all(),
    };
    let config = match a.pipeline {
        PipelineArg::Texture => PipelineConfig::RandomTexture {
            width: a.width,
            height: a.height,
            kinds: TextureKind::all(),
        },
        PipelineArg::Kml => PipelineConfig::Kml(kml),
        PipelineArg::KmlMixup => PipelineConfig::KmlMixup(KmlMixupConfig {
            kml,
            alpha: a.alpha,
            lambda: a.lambda,
        }),
    };
    write_samples(&config, seed, a.count, &a.out)
}

fn gestalt(a: &GestaltArgs, seed: u64) -> CliResult<Outcome> {
    let principle = match a.principle {
        PrincipleArg::Closure => Principle::Closure,
        PrincipleArg::Kanizsa => Principle::Kanizsa,
        PrincipleArg::Connection => Principle::Connection,
        PrincipleArg::Continuity => Principle::Continuity,
        PrincipleArg::Enclosure => Principle::Enclosure,
        PrincipleArg::Proximity => Principle::Proximity,
        PrincipleArg::Similarity => Principle::Similarity,
    };
    let config = PipelineConfig::Gestalt(GestaltSpec::new(principle, a.width, a.height));
    write_samples(&config, seed, a.count, &a.out)
}

fn curve(a: &CurveArgs) -> CliResult<Outcome> {
    let memories = a
        .memories
        .iter()
        .map(|m| {
            let (name, path) = split_memory(m)?;
            Ok((name, MemoryHandle::new(load_store(&path)?)))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let queries = load_store(&a.queries)?;
    let points = privacy_accuracy_curve(&memories, &queries, a.k)?;
    let csv = curve_to_csv(&points);
    Ok(Outcome::new(json!({ "k": a.k, "points": points }))?.with_csv(csv))
}

fn verify(a: &VerifyDatasetArgs) -> CliResult<Outcome> {
    let report = verify_dataset(&a.dir).with_context(|| format!("verifying {}", a.dir.display()))?;
    let failure = (!report.mismatched.is_empty())
        .then(|| invariant(format!("{} of {} samples differ", report.mismatched.len(), report.checked)));
    let mut outcome = Outcome::new(&report)?;
    outcome.failure = failure;
    Ok(outcome)
}
