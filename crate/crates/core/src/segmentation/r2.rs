use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FeatureGrid, LabelMask, IGNORE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    /// `r2_raw` clamped to [0, 1].
    pub r2: f64,
    pub r2_raw: f64,
    /// R² of each one-hot target on its own.
    pub per_class: BTreeMap<i32, f64>,
    pub c: usize,
    /// Non-ignore cells used in the fit.
    pub cells: usize,
}

/// Explained-variance ratio of an ordinary least-squares fit (with
/// intercept) from feature channels to one-hot label indicators.
///
/// SSE and SST are pooled over every indicator column and every non-ignore
/// cell: `R² = 1 - SSE / SST`. The fit is the minimum-norm least-squares
/// solution, so rank-deficient features (for instance constant channels)
/// are fine.
pub fn r2_score(features: &FeatureGrid, mask: &LabelMask) -> Result<R2Report> {
    if features.rows != mask.rows || features.cols != mask.cols {
        return Err(Error::DimensionMismatch {
            expected: mask.rows * mask.cols,
            found: features.rows * features.cols,
        });
    }
    let cells: Vec<usize> = (0..mask.labels.len()).filter(|&i| mask.labels[i] != IGNORE).collect();
    let classes = mask.classes();
    if classes.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "R² needs at least two labels, mask has {}",
            classes.len()
        )));
    }
    let (m, c, t) = (cells.len(), features.channels, classes.len());

    // centering absorbs the intercept
    let mut x = DMatrix::<f64>::zeros(m, c);
    for ch in 0..c {
        let col: Vec<f64> = cells.iter().map(|&i| features.cell(i)[ch]).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("non-finite feature value".into()));
        }
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        let mean = col.iter().sum::<f64>() / m as f64;
        for (row, v) in col.iter().enumerate() {
            x[(row, ch)] = v - mean;
        }
    }
    let mut y = DMatrix::<f64>::zeros(m, t);
    for (j, &class) in classes.iter().enumerate() {
        let count = cells.iter().filter(|&&i| mask.labels[i] == class).count();
        let mean = count as f64 / m as f64;
        for (row, &i) in cells.iter().enumerate() {
            let hit = if mask.labels[i] == class { 1.0 } else { 0.0 };
            y[(row, j)] = hit - mean;
        }
    }

    let residual = if c == 0 {
        y.clone()
    } else {
        let svd = x.clone().svd(true, true);
        let sigma_max = svd.singular_values.max();
        let tol = sigma_max * (m.max(c) as f64) * f64::EPSILON;
        let beta = svd
            .solve(&y, tol)
            .map_err(|e| Error::Invariant(format!("least-squares solve failed: {e}")))?;
        &y - &x * beta
    };

    let mut sse_total = 0.0;
    let mut sst_total = 0.0;
    let mut per_class = BTreeMap::new();
    for (j, &class) in classes.iter().enumerate() {
        let sse: f64 = residual.column(j).iter().map(|r| r * r).sum();
        let sst: f64 = y.column(j).iter().map(|v| v * v).sum();
        sse_total += sse;
        sst_total += sst;
        per_class.insert(class, 1.0 - sse / sst);
    }
    let r2_raw = 1.0 - sse_total / sst_total;
    Ok(R2Report {
        r2: r2_raw.clamp(0.0, 1.0),
        r2_raw,
        per_class,
        c,
        cells: m,
    })
}
