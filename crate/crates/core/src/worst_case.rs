//! Worst-case quantile means over per-unit scores.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{anchored_mean, mean_non_null, Score};

/// Thresholds averaged into q̄.
pub const QBAR_THRESHOLDS: [u32; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// Every threshold reported: the extreme tails plus the q̄ thresholds.
pub const REPORTED_THRESHOLDS: [u32; 12] = [1, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// Number of lowest scores averaged at threshold `q` percent: `max(1, ⌊n·q/100⌋)`.
pub fn worst_case_count(n: usize, q: u32) -> usize {
    // integer arithmetic keeps the floor exact
    ((n as u64 * q as u64 / 100) as usize).max(1)
}

/// Mean of the lowest `max(1, ⌊len·q%⌋)` scores.
pub fn worst_case_mean(scores: &[f64], q: u32) -> Result<f64> {
    check_q(q)?;
    if scores.is_empty() {
        return Err(Error::EmptyInput("worst-case scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(prefix_mean(&sorted, q))
}

fn check_q(q: u32) -> Result<()> {
    if q == 0 || q > 100 {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 100]")));
    }
    Ok(())
}

fn prefix_mean(sorted: &[f64], q: u32) -> f64 {
    let n = worst_case_count(sorted.len(), q);
    anchored_mean(sorted[..n].iter().copied()).expect("n >= 1")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileReport {
    /// Threshold → per-group worst-case score.
    pub per_class_q: BTreeMap<u32, Vec<Score>>,
    pub per_class_qbar: Vec<Score>,
    /// Threshold → mean over non-NULL groups.
    pub miou_q: BTreeMap<u32, Score>,
    pub miou_qbar: Score,
}

impl QuantileReport {
    pub fn at(&self, q: u32) -> Score {
        self.miou_q.get(&q).copied().unwrap_or(Score::Null)
    }
}

/// Worst-case report over groups of unit scores (one group per class, or a
/// single group of per-image scores). Empty groups are NULL.
pub fn quantile_suite(groups: &[Vec<f64>]) -> Result<QuantileReport> {
    for q in REPORTED_THRESHOLDS {
        check_q(q)?;
    }
    let sorted: Vec<Option<Vec<f64>>> = groups
        .iter()
        .map(|g| {
            (!g.is_empty()).then(|| {
                let mut s = g.clone();
                s.sort_by(f64::total_cmp);
                s
            })
        })
        .collect();

    let mut per_class_q = BTreeMap::new();
    let mut miou_q = BTreeMap::new();
    for q in REPORTED_THRESHOLDS {
        let row: Vec<Score> = sorted
            .iter()
            .map(|s| Score::from_option(s.as_ref().map(|s| prefix_mean(s, q).clamp(0.0, 1.0))))
            .collect();
        miou_q.insert(q, Score::from_option(mean_non_null(row.iter().copied())));
        per_class_q.insert(q, row);
    }
    let per_class_qbar: Vec<Score> = (0..groups.len())
        .map(|c| {
            let vals: Option<Vec<f64>> = QBAR_THRESHOLDS.iter().map(|q| per_class_q[q][c].as_option()).collect();
            Score::from_option(vals.and_then(anchored_mean).map(|m| m.clamp(0.0, 1.0)))
        })
        .collect();
    let miou_qbar = Score::from_option(mean_non_null(per_class_qbar.iter().copied()));

    Ok(QuantileReport {
        per_class_q,
        per_class_qbar,
        miou_q,
        miou_qbar,
    })
}
