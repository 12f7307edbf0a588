//! Exact cosine-similarity search and majority-vote classification over an
//! [`EmbeddingStore`].
//!
//! Neighbors are ranked under a total order: similarity descending, then
//! record id ascending. Every scan is exhaustive, so results are exact and
//! independent of evaluation order. The leave-one-out privacy audit relies
//! on that.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingStore, Label};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub similarity: f64,
    pub label: Label,
}

/// Ranked neighbors of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query_id: Option<u64>,
    pub entries: Vec<Neighbor>,
    /// Set when the requested k exceeded the store size.
    pub clamped: bool,
}

impl NeighborList {
    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|n| n.id).collect()
    }
}

/// The ranking used everywhere: higher similarity first, then lower id.
pub fn rank_order(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Dot product and squared norms, accumulated in f64.
fn dot_and_norms(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    (dot, aa, bb)
}

/// Cosine similarity clamped to [-1, 1], or `None` if either vector has
/// zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Option<f64> {
    let (dot, aa, bb) = dot_and_norms(a, b);
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    Some((dot / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

fn check_query(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be positive".into()));
    }
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if query.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            found: query.len(),
        });
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invariant("query has a non-finite component".into()));
    }
    let qq: f64 = query.iter().map(|&x| (x as f64) * (x as f64)).sum();
    if qq == 0.0 {
        return Err(Error::ZeroNormInput("query".into()));
    }
    Ok(qq.sqrt())
}

/// Exact top-k search. Returns `min(k, store.len())` entries.
pub fn knn_search(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<NeighborList> {
    let qnorm = check_query(store, query, k)?;
    let records = store.records();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(records.len());
    for (idx, rec) in records.iter().enumerate() {
        let (dot, _, rr) = dot_and_norms(query, &rec.vector);
        if rr == 0.0 {
            return Err(Error::ZeroNorm(rec.id));
        }
        let sim = (dot / (qnorm * rr.sqrt())).clamp(-1.0, 1.0);
        scored.push((sim, idx));
    }
    // records are sorted by id, so comparing indices is comparing ids
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let take = k.min(scored.len());
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, cmp);
        scored.truncate(take);
    }
    scored.sort_unstable_by(cmp);
    let entries = scored
        .into_iter()
        .map(|(similarity, idx)| Neighbor {
            id: records[idx].id,
            similarity,
            label: records[idx].label,
        })
        .collect();
    Ok(NeighborList {
        query_id: None,
        entries,
        clamped: k > records.len(),
    })
}

/// Runs [`knn_search`] for every query in parallel. Query ids are positions.
pub fn knn_search_many(store: &EmbeddingStore, queries: &[Vec<f32>], k: usize) -> Result<Vec<NeighborList>> {
    queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let mut list = knn_search(store, q, k)?;
            list.query_id = Some(i as u64);
            Ok(list)
        })
        .collect()
}

/// Outcome of a majority vote over ranked neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub label: u32,
    pub votes: BTreeMap<u32, usize>,
    /// Winning count minus the runner-up count (0 for a tie).
    pub margin: usize,
}

/// Majority vote over neighbors given in rank order. Count ties go to the
/// label whose best-ranked neighbor comes first. `None` for no neighbors.
pub fn majority_vote<'a, I>(neighbors: I) -> Result<Option<Vote>>
where
    I: IntoIterator<Item = &'a Neighbor>,
{
    // label -> (count, first rank)
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (rank, n) in neighbors.into_iter().enumerate() {
        let label = n.label.ok_or(Error::UnlabeledNeighbor(n.id))?;
        tally.entry(label).or_insert((0, rank)).0 += 1;
    }
    let Some((&label, &(top, _))) = tally
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
    else {
        return Ok(None);
    };
    let runner_up = tally
        .iter()
        .filter(|(&l, _)| l != label)
        .map(|(_, &(c, _))| c)
        .max()
        .unwrap_or(0);
    Ok(Some(Vote {
        label,
        votes: tally.into_iter().map(|(l, (c, _))| (l, c)).collect(),
        margin: top - runner_up,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u32,
    pub votes: BTreeMap<u32, usize>,
    pub margin: usize,
    pub neighbor_ids: Vec<u64>,
    /// Requested k exceeded the store size and was reduced.
    pub clamped: bool,
}

pub fn classify(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Prediction> {
    let list = knn_search(store, query, k)?;
    prediction_from(&list)
}

fn prediction_from(list: &NeighborList) -> Result<Prediction> {
    let vote = majority_vote(&list.entries)?.ok_or(Error::EmptyStore)?;
    Ok(Prediction {
        label: vote.label,
        votes: vote.votes,
        margin: vote.margin,
        neighbor_ids: list.ids(),
        clamped: list.clamped,
    })
}

pub fn classify_many(store: &EmbeddingStore, queries: &[Vec<f32>], k: usize) -> Result<Vec<Prediction>> {
    queries.par_iter().map(|q| classify(store, q, k)).collect()
}

/// Predicted label where an empty memory yields the null label `None`.
pub fn predict_label(store: &EmbeddingStore, query: &[f32], k: usize) -> Result<Option<u32>> {
    if store.is_empty() {
        if k == 0 {
            return Err(Error::InvalidParam("k must be positive".into()));
        }
        return Ok(None);
    }
    classify(store, query, k).map(|p| Some(p.label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub label: u32,
    pub name: Option<String>,
    pub support: u64,
    pub correct: u64,
    /// `None` when the class has no queries.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub k: usize,
    pub clamped: bool,
    pub queries: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
}

impl AccuracyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,name,support,correct,accuracy\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.label,
                c.name.as_deref().unwrap_or(""),
                c.support,
                c.correct,
                c.accuracy.map(|a| a.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// Number of classes shared by a memory and a labeled query set.
fn shared_label_space(memory: &EmbeddingStore, queries: &EmbeddingStore) -> Result<usize> {
    if let Some(rec) = queries.records().iter().find(|r| r.label.is_none()) {
        return Err(Error::LabelSpaceMismatch(format!("query {} is unlabeled", rec.id)));
    }
    match (memory.class_names(), queries.class_names()) {
        (Some(a), Some(b)) if a != b => Err(Error::LabelSpaceMismatch(
            "memory and query class names differ".into(),
        )),
        (Some(names), _) | (None, Some(names)) => {
            let max_query = queries.records().iter().filter_map(|r| r.label).max();
            if let Some(l) = max_query.filter(|&l| l as usize >= names.len()) {
                return Err(Error::LabelSpaceMismatch(format!(
                    "query label {l} outside {} classes",
                    names.len()
                )));
            }
            Ok(names.len())
        }
        (None, None) => Ok(memory
            .records()
            .iter()
            .chain(queries.records())
            .filter_map(|r| r.label)
            .max()
            .map_or(0, |m| m as usize + 1)),
    }
}

/// Top-1 accuracy of KNN classification of `queries` against `memory`.
pub fn evaluate_classification(
    memory: &EmbeddingStore,
    queries: &EmbeddingStore,
    k: usize,
) -> Result<AccuracyReport> {
    if memory.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: memory.dim(),
            found: queries.dim(),
        });
    }
    let classes = shared_label_space(memory, queries)?;
    let predictions: Vec<Prediction> = queries
        .records()
        .par_iter()
        .map(|q| classify(memory, &q.vector, k))
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut correct = 0u64;
    for (q, p) in queries.records().iter().zip(&predictions) {
        let truth = q.label.expect("checked above") as usize;
        confusion[truth][p.label as usize] += 1;
        if truth == p.label as usize {
            correct += 1;
        }
    }
    let names = memory.class_names().or(queries.class_names());
    let per_class = (0..classes)
        .map(|c| {
            let support: u64 = confusion[c].iter().sum();
            let hit = confusion[c][c];
            ClassAccuracy {
                label: c as u32,
                name: names.map(|n| n[c].clone()),
                support,
                correct: hit,
                accuracy: (support > 0).then(|| hit as f64 / support as f64),
            }
        })
        .collect();
    let n = queries.len() as u64;
    Ok(AccuracyReport {
        k,
        clamped: k > memory.len(),
        queries: n,
        correct,
        accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        per_class,
        confusion,
    })
}
