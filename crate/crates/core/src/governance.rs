//! Learning and unlearning as memory mutation, and exact per-record privacy
//! auditing.
//!
//! For a deterministic classifier, a record `x` is private with respect to a
//! query set when every query prediction is the same with and without `x`
//! in the memory. A record whose removal changes at least one prediction is
//! non-private. An empty memory predicts the null label, which differs from
//! every class label.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{evaluate_classification, knn_search, majority_vote, predict_label};
use crate::store::{EmbeddingRecord, EmbeddingStore};

/// Snapshot of the memory plus a mutation counter. Mutations return a new
/// handle; existing handles keep their snapshot.
#[derive(Debug, Clone)]
pub struct MemoryHandle {
    store: Arc<EmbeddingStore>,
    generation: u64,
}

impl MemoryHandle {
    pub fn new(store: EmbeddingStore) -> Self {
        Self {
            store: Arc::new(store),
            generation: 0,
        }
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    fn next(&self, store: EmbeddingStore) -> Self {
        Self {
            store: Arc::new(store),
            generation: self.generation + 1,
        }
    }

    /// Drops exactly the given records. Fails without removing anything if
    /// any id is absent.
    pub fn remove_records(&self, ids: &BTreeSet<u64>) -> Result<Self> {
        let missing: Vec<u64> = ids
            .iter()
            .copied()
            .filter(|&id| self.store.position(id).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnknownIds(missing));
        }
        let kept = self
            .store
            .records()
            .iter()
            .filter(|r| !ids.contains(&r.id))
            .cloned()
            .collect();
        Ok(self.next(self.store.with_records(kept)?))
    }

    /// Adds new records. Ids must not collide with each other or with the
    /// memory.
    pub fn add_records(&self, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != self.store.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.store.dim(),
                    found: r.vector.len(),
                });
            }
            if !seen.insert(r.id) || self.store.position(r.id).is_some() {
                return Err(Error::DuplicateId(r.id));
            }
        }
        let mut merged = self.store.records().to_vec();
        merged.extend(records);
        merged.sort_by_key(|r| r.id);
        Ok(self.next(self.store.with_records(merged)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAuditReport {
    pub k: usize,
    pub fraction_non_private: f64,
    pub non_private_ids: BTreeSet<u64>,
    /// Record id -> ids (positions) of the queries whose prediction flips
    /// when the record is removed.
    pub affected: BTreeMap<u64, Vec<u64>>,
}

impl PrivacyAuditReport {
    fn from_affected(k: usize, store_size: usize, affected: BTreeMap<u64, Vec<u64>>) -> Self {
        let non_private_ids: BTreeSet<u64> = affected.keys().copied().collect();
        Self {
            k,
            fraction_non_private: non_private_ids.len() as f64 / store_size as f64,
            non_private_ids,
            affected,
        }
    }
}

fn check_audit_inputs(memory: &MemoryHandle, queries: &[Vec<f32>], k: usize) -> Result<()> {
    let store = memory.store();
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if queries.is_empty() {
        return Err(Error::InvalidParam("audit needs at least one query".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be positive".into()));
    }
    if let Some(r) = store.records().iter().find(|r| r.label.is_none()) {
        return Err(Error::UnlabeledNeighbor(r.id));
    }
    Ok(())
}

/// Leave-one-out audit by literal rebuilding: for each record, construct the
/// memory without it and reclassify every query. O(N * M) classifications.
pub fn audit_privacy_naive(memory: &MemoryHandle, queries: &[Vec<f32>], k: usize) -> Result<PrivacyAuditReport> {
    check_audit_inputs(memory, queries, k)?;
    let store = memory.store();
    let baseline: Vec<Option<u32>> = queries
        .iter()
        .map(|q| predict_label(store, q, k))
        .collect::<Result<_>>()?;
    let flips: Vec<(u64, Vec<u64>)> = store
        .records()
        .par_iter()
        .map(|x| {
            let without: Vec<EmbeddingRecord> = store
                .records()
                .iter()
                .filter(|r| r.id != x.id)
                .cloned()
                .collect();
            let rebuilt = store.with_records(without)?;
            let mut flipped = Vec::new();
            for (qi, q) in queries.iter().enumerate() {
                if predict_label(&rebuilt, q, k)? != baseline[qi] {
                    flipped.push(qi as u64);
                }
            }
            Ok((x.id, flipped))
        })
        .collect::<Result<_>>()?;
    let affected = flips.into_iter().filter(|(_, f)| !f.is_empty()).collect();
    Ok(PrivacyAuditReport::from_affected(k, store.len(), affected))
}

/// Same report as [`audit_privacy_naive`] from one top-(k+1) search per
/// query.
///
/// Only a record inside a query's top-k can change its prediction. Removing
/// it promotes the rank-(k+1) neighbor (if any) into the top-k, because the
/// ranking is a strict total order and every other similarity is unchanged.
pub fn audit_privacy_fast(memory: &MemoryHandle, queries: &[Vec<f32>], k: usize) -> Result<PrivacyAuditReport> {
    check_audit_inputs(memory, queries, k)?;
    let store = memory.store();
    let per_query: Vec<Vec<u64>> = queries
        .par_iter()
        .map(|q| {
            let list = knn_search(store, q, k + 1)?;
            let top_k = &list.entries[..k.min(list.entries.len())];
            let promoted = list.entries.get(k);
            let baseline = majority_vote(top_k)?.map(|v| v.label);
            let mut flipping = Vec::new();
            for (rank, x) in top_k.iter().enumerate() {
                let remaining = top_k[..rank].iter().chain(&top_k[rank + 1..]).chain(promoted);
                let after = majority_vote(remaining)?.map(|v| v.label);
                if after != baseline {
                    flipping.push(x.id);
                }
            }
            Ok(flipping)
        })
        .collect::<Result<_>>()?;
    let mut affected: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for (qi, ids) in per_query.into_iter().enumerate() {
        for id in ids {
            affected.entry(id).or_default().push(qi as u64);
        }
    }
    Ok(PrivacyAuditReport::from_affected(k, store.len(), affected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub memory: String,
    pub accuracy: f64,
    pub fraction_non_private: f64,
}

/// Accuracy and non-private fraction for each named memory, against one
/// labeled query set.
pub fn privacy_accuracy_curve(
    memories: &[(String, MemoryHandle)],
    queries: &EmbeddingStore,
    k: usize,
) -> Result<Vec<CurvePoint>> {
    let vectors: Vec<Vec<f32>> = queries.records().iter().map(|r| r.vector.clone()).collect();
    memories
        .iter()
        .map(|(name, mem)| {
            let acc = evaluate_classification(mem.store(), queries, k)?;
            let audit = audit_privacy_fast(mem, &vectors, k)?;
            Ok(CurvePoint {
                memory: name.clone(),
                accuracy: acc.accuracy,
                fraction_non_private: audit.fraction_non_private,
            })
        })
        .collect()
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("memory,accuracy,fraction_non_private\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.memory, p.accuracy, p.fraction_non_private));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::classify;

    fn rec(id: u64, v: &[f32], label: u32) -> EmbeddingRecord {
        EmbeddingRecord::new(id, v.to_vec(), Some(label))
    }

    fn handle(records: Vec<EmbeddingRecord>) -> MemoryHandle {
        let dim = records[0].vector.len();
        MemoryHandle::new(EmbeddingStore::new(dim, records).unwrap())
    }

    #[test]
    fn remove_all_and_none() {
        let m = handle(vec![rec(1, &[1.0, 0.0], 0), rec(2, &[0.0, 1.0], 1)]);
        let all: BTreeSet<u64> = [1, 2].into();
        let empty = m.remove_records(&all).unwrap();
        assert!(empty.store().is_empty());
        assert_eq!(empty.generation(), 1);
        let same = m.remove_records(&BTreeSet::new()).unwrap();
        assert_eq!(same.store(), m.store());
        assert_eq!(same.generation(), 1);
    }

    #[test]
    fn remove_unknown_is_atomic() {
        let m = handle(vec![rec(1, &[1.0, 0.0], 0), rec(2, &[0.0, 1.0], 1)]);
        let err = m.remove_records(&[1, 5, 9].into()).unwrap_err();
        match err {
            Error::UnknownIds(ids) => assert_eq!(ids, vec![5, 9]),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(m.store().len(), 2);
    }

    #[test]
    fn add_then_remove_restores_predictions() {
        let m = handle(vec![rec(1, &[1.0, 0.0], 0), rec(4, &[0.0, 1.0], 1), rec(6, &[0.7, 0.7], 1)]);
        let query = vec![0.9f32, 0.2];
        let added = m.add_records(vec![rec(2, &[0.9, 0.2], 2), rec(9, &[0.95, 0.25], 2)]).unwrap();
        assert_eq!(classify(added.store(), &query, 1).unwrap().label, 2);
        let back = added.remove_records(&[2, 9].into()).unwrap();
        assert_eq!(back.generation(), 2);
        assert_eq!(back.store(), m.store());
        assert_eq!(
            classify(back.store(), &query, 3).unwrap(),
            classify(m.store(), &query, 3).unwrap()
        );
    }

    #[test]
    fn add_rejects_duplicates_and_bad_dims() {
        let m = handle(vec![rec(1, &[1.0, 0.0], 0)]);
        assert!(matches!(m.add_records(vec![rec(1, &[1.0, 1.0], 0)]).unwrap_err(), Error::DuplicateId(1)));
        assert!(matches!(
            m.add_records(vec![rec(3, &[1.0, 1.0], 0), rec(3, &[0.0, 1.0], 0)]).unwrap_err(),
            Error::DuplicateId(3)
        ));
        assert!(matches!(
            m.add_records(vec![rec(3, &[1.0], 0)]).unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn two_record_audit() {
        let m = handle(vec![rec(1, &[1.0, 0.0], 0), rec(2, &[0.0, 1.0], 1)]);
        let queries = vec![vec![1.0f32, 0.0]];
        for report in [
            audit_privacy_naive(&m, &queries, 1).unwrap(),
            audit_privacy_fast(&m, &queries, 1).unwrap(),
        ] {
            assert_eq!(report.non_private_ids, [1].into());
            assert_eq!(report.fraction_non_private, 0.5);
            assert_eq!(report.affected[&1], vec![0]);
        }
    }

    #[test]
    fn single_label_memory_is_private() {
        let m = handle(vec![rec(1, &[1.0, 0.0], 3), rec(2, &[0.0, 1.0], 3), rec(3, &[0.5, 0.5], 3)]);
        let queries = vec![vec![1.0f32, 0.1], vec![0.2, 1.0]];
        let r = audit_privacy_fast(&m, &queries, 2).unwrap();
        assert_eq!(r.fraction_non_private, 0.0);
        assert_eq!(r, audit_privacy_naive(&m, &queries, 2).unwrap());
    }

    #[test]
    fn singleton_memory_is_non_private() {
        let m = handle(vec![rec(5, &[1.0, 0.0], 0)]);
        let queries = vec![vec![0.0f32, 1.0]];
        let r = audit_privacy_naive(&m, &queries, 3).unwrap();
        assert_eq!(r.fraction_non_private, 1.0);
        assert_eq!(r, audit_privacy_fast(&m, &queries, 3).unwrap());
    }

    #[test]
    fn audit_input_errors() {
        let empty = MemoryHandle::new(EmbeddingStore::new(2, vec![]).unwrap());
        assert!(matches!(audit_privacy_fast(&empty, &[vec![1.0, 0.0]], 1).unwrap_err(), Error::EmptyStore));
        let m = handle(vec![rec(1, &[1.0, 0.0], 0)]);
        assert!(audit_privacy_naive(&m, &[], 1).is_err());
    }

    #[test]
    fn curve_csv_header() {
        let m = handle(vec![rec(1, &[1.0, 0.0], 0), rec(2, &[0.0, 1.0], 1)]);
        let q = EmbeddingStore::new(2, vec![rec(0, &[1.0, 0.1], 0)]).unwrap();
        let points = privacy_accuracy_curve(&[("m".into(), m)], &q, 1).unwrap();
        assert_eq!(points[0].accuracy, 1.0);
        assert_eq!(points[0].fraction_non_private, 0.5);
        assert_eq!(curve_to_csv(&points), "memory,accuracy,fraction_non_private\nm,1,0.5\n");
    }
}
