//! Dataset-level metrics: Acc, mAcc, per-class IoU over accumulated counts and mIoU^D.

use serde::Serialize;

use crate::confusion::DatasetConfusion;
use crate::error::{Error, Result};
use crate::types::{mean_non_null, Score};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PixelMetricReport {
    pub acc: f64,
    pub macc: f64,
    /// Per-class accuracy, NULL for classes without ground-truth pixels.
    pub acc_per_class: Vec<Score>,
    pub iou_d: Vec<Score>,
    pub miou_d: f64,
}

pub fn compute_pixel_metrics(dc: &DatasetConfusion) -> Result<PixelMetricReport> {
    let totals = &dc.totals;
    let tp: u64 = totals.iter().map(|c| c.tp).sum();
    let gt: u64 = totals.iter().map(|c| c.gt_pixels()).sum();
    if gt == 0 {
        return Err(Error::EmptyEvaluationDomain);
    }

    let acc_per_class: Vec<Score> = totals.iter().map(|c| ratio(c.tp, c.gt_pixels())).collect();
    let iou_d: Vec<Score> = totals.iter().map(|c| ratio(c.tp, c.union())).collect();

    // gt > 0 guarantees at least one non-NULL entry in both.
    let macc = mean_non_null(acc_per_class.iter().copied()).unwrap_or(0.0);
    let miou_d = mean_non_null(iou_d.iter().copied()).unwrap_or(0.0);

    Ok(PixelMetricReport {
        acc: tp as f64 / gt as f64,
        macc,
        acc_per_class,
        iou_d,
        miou_d,
    })
}

fn ratio(num: u64, den: u64) -> Score {
    if den == 0 {
        Score::Null
    } else {
        Score::value(num as f64 / den as f64)
    }
}
