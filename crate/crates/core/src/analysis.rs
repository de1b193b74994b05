//! Dataset and model auditing analytics: image-level histograms, worst image
//! ranking, object size imbalance and class coverage.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::confusion::DatasetConfusion;
use crate::error::{Error, Result};
use crate::fine::FineMetricReport;
use crate::instance::InstanceCell;
use crate::types::{LabelMap, Score};

pub const DEFAULT_BINS: usize = 30;

/// Population moments of a sample. Skewness is the biased g1 and kurtosis
/// the biased excess g2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub skew: f64,
    pub kurtosis: f64,
    /// All values equal: std, skew and kurtosis are reported as 0.
    pub degenerate: bool,
}

impl Moments {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "moments need at least 2 values, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / n;
        if min == max {
            return Ok(Self {
                min,
                max,
                mean: min,
                std: 0.0,
                skew: 0.0,
                kurtosis: 0.0,
                degenerate: true,
            });
        }
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in values {
            let d = v - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        Ok(Self {
            min,
            max,
            mean,
            std: m2.sqrt(),
            skew: m3 / m2.powf(1.5),
            kurtosis: m4 / (m2 * m2) - 3.0,
            degenerate: false,
        })
    }
}

/// Histogram of image-level scores on the percent scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramReport {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Moments of the scores in percent.
    pub stats: Moments,
}

/// Uniform histogram over [0, 100] of the non-NULL scores (given in [0, 1]).
pub fn histogram(scores: &[Score], num_bins: usize) -> Result<HistogramReport> {
    if num_bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let pct: Vec<f64> = scores.iter().filter_map(|s| s.as_option()).map(|v| v * 100.0).collect();
    let stats = Moments::from_values(&pct)?;
    let bin_edges = (0..=num_bins).map(|i| 100.0 * i as f64 / num_bins as f64).collect();
    let mut counts = vec![0u64; num_bins];
    for v in &pct {
        let bin = ((v / 100.0 * num_bins as f64).floor() as usize).min(num_bins - 1);
        counts[bin] += 1;
    }
    Ok(HistogramReport {
        bin_edges,
        counts,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedImage {
    pub rank: usize,
    pub image_id: String,
    pub iou_i: f64,
}

/// The `top_n` lowest-scoring images, ascending; ties by image id.
pub fn rank_worst_images(fine: &FineMetricReport, top_n: usize) -> Result<Vec<RankedImage>> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let mut scored: Vec<(&str, f64)> = fine
        .image_ids()
        .iter()
        .zip(&fine.iou_i_per_image)
        .filter_map(|(id, s)| s.as_option().map(|v| (id.as_str(), v)))
        .collect();
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(scored
        .into_iter()
        .take(top_n)
        .enumerate()
        .map(|(i, (id, v))| RankedImage {
            rank: i + 1,
            image_id: id.to_string(),
            iou_i: v,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImbalanceReport {
    /// Largest over smallest instance size across the dataset.
    pub r_d: Vec<Option<f64>>,
    /// Largest within-image ratio over all images.
    pub r_i: Vec<Option<f64>>,
    /// Group tag → mean of ln(r_d / r_i) over the group's classes.
    pub mean_log_ratio_by_group: BTreeMap<String, f64>,
}

/// Size-imbalance ratios from ground-truth instance sizes.
///
/// Classes without instances are `None` and left out of the group means.
pub fn size_imbalance(
    cells: &[InstanceCell],
    num_classes: usize,
    groups: &BTreeMap<u32, String>,
) -> Result<ImbalanceReport> {
    // class -> image -> (min, max)
    let mut per_image: Vec<BTreeMap<&str, (u64, u64)>> = vec![BTreeMap::new(); num_classes];
    for cell in cells {
        let c = cell.class_id as usize;
        if c >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "instance class {c} out of range for {num_classes} classes"
            )));
        }
        if cell.size() == 0 {
            return Err(Error::InvalidArgument(format!(
                "instance {} in {} has zero size",
                cell.instance_id, cell.image_id
            )));
        }
        let s = cell.size();
        per_image[c]
            .entry(cell.image_id.as_str())
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(s);
                *hi = (*hi).max(s);
            })
            .or_insert((s, s));
    }

    let mut r_d = Vec::with_capacity(num_classes);
    let mut r_i = Vec::with_capacity(num_classes);
    for images in &per_image {
        if images.is_empty() {
            r_d.push(None);
            r_i.push(None);
            continue;
        }
        let lo = images.values().map(|v| v.0).min().unwrap();
        let hi = images.values().map(|v| v.1).max().unwrap();
        r_d.push(Some(hi as f64 / lo as f64));
        let within = images
            .values()
            .map(|&(lo, hi)| hi as f64 / lo as f64)
            .fold(1.0, f64::max);
        r_i.push(Some(within));
    }

    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (&class, tag) in groups {
        let c = class as usize;
        if let (Some(Some(d)), Some(Some(i))) = (r_d.get(c), r_i.get(c)) {
            let e = acc.entry(tag.clone()).or_default();
            e.0 += (d / i).ln();
            e.1 += 1;
        }
    }
    let mean_log_ratio_by_group = acc.into_iter().map(|(tag, (sum, n))| (tag, sum / n as f64)).collect();

    Ok(ImbalanceReport {
        r_d,
        r_i,
        mean_log_ratio_by_group,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageReport {
    pub mean_coverage_pct: f64,
    /// Standard deviation over mean, in percent.
    pub normalized_std_pct: f64,
}

/// Coverage from the number of distinct ground-truth classes of each image.
pub fn coverage_from_counts<I>(distinct_per_image: I, num_classes: usize) -> Result<CoverageReport>
where
    I: IntoIterator<Item = usize>,
{
    if num_classes == 0 {
        return Err(Error::InvalidArgument("coverage needs at least one class".into()));
    }
    let pct: Vec<f64> = distinct_per_image
        .into_iter()
        .map(|k| k as f64 / num_classes as f64 * 100.0)
        .collect();
    if pct.is_empty() {
        return Err(Error::EmptyInput("coverage images"));
    }
    let n = pct.len() as f64;
    let mean = pct.iter().sum::<f64>() / n;
    let std = (pct.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(CoverageReport {
        mean_coverage_pct: mean,
        normalized_std_pct: if mean > 0.0 { std / mean * 100.0 } else { 0.0 },
    })
}

pub fn coverage<'a, I>(gt_maps: I, num_classes: usize) -> Result<CoverageReport>
where
    I: IntoIterator<Item = &'a LabelMap>,
{
    coverage_from_counts(gt_maps.into_iter().map(|m| m.classes_present().len()), num_classes)
}

/// Same as [`coverage`], reading class presence from confusion counts.
pub fn coverage_from_confusion(dc: &DatasetConfusion) -> Result<CoverageReport> {
    coverage_from_counts(dc.per_image.iter().map(|i| i.gt_classes()), dc.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fine::compute_fine_metrics;
    use crate::types::ScoreMatrix;

    #[test]
    fn moments_of_skewed_sample() {
        let m = Moments::from_values(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.mean, 0.25);
        assert!((m.std - 0.1875f64.sqrt()).abs() < 1e-15);
        assert!((m.std - 0.4330).abs() < 1e-4);
        // m3 = 0.09375, m4 = 0.08203125
        assert!((m.skew - 0.09375 / 0.1875f64.powf(1.5)).abs() < 1e-12);
        assert!((m.skew - 1.1547).abs() < 1e-4);
        assert!((m.kurtosis - (-2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_symmetric() {
        let m = Moments::from_values(&[0.7; 5]).unwrap();
        assert!(m.degenerate);
        assert_eq!((m.std, m.skew, m.kurtosis), (0.0, 0.0, 0.0));
        let m = Moments::from_values(&[0.25, 0.75, 0.25, 0.75]).unwrap();
        assert_eq!(m.skew, 0.0);
        assert!(Moments::from_values(&[0.5]).is_err());
    }

    #[test]
    fn histogram_bins() {
        let scores = [Score::Value(0.0), Score::Value(1.0), Score::Null, Score::Value(0.55)];
        let h = histogram(&scores, 10).unwrap();
        assert_eq!(h.bin_edges.len(), 11);
        assert_eq!(h.counts.iter().sum::<u64>(), 3);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[9], 1);
        assert_eq!(h.stats.max, 100.0);
        assert!(histogram(&[Score::Value(0.5), Score::Null], 10).is_err());
    }

    fn fine(ids: &[&str], scores: &[f64]) -> FineMetricReport {
        let rows = scores.iter().map(|&s| vec![Score::Value(s)]).collect();
        let sm = ScoreMatrix::from_rows(ids.iter().map(|s| s.to_string()).collect(), rows).unwrap();
        compute_fine_metrics(&sm).unwrap()
    }

    #[test]
    fn ranking() {
        let f = fine(&["a", "b", "c"], &[0.9, 0.1, 0.5]);
        let r = rank_worst_images(&f, 2).unwrap();
        let got: Vec<_> = r.iter().map(|x| (x.image_id.as_str(), x.iou_i)).collect();
        assert_eq!(got, vec![("b", 0.1), ("c", 0.5)]);

        let f = fine(&["z", "y", "x"], &[0.1, 0.1, 0.3]);
        let r = rank_worst_images(&f, 3).unwrap();
        let ids: Vec<_> = r.iter().map(|x| x.image_id.as_str()).collect();
        assert_eq!(ids, vec!["y", "z", "x"]);
        assert!(rank_worst_images(&f, 0).is_err());
    }

    fn cell(image: &str, class: u32, id: u32, size: u64) -> InstanceCell {
        InstanceCell {
            image_id: image.into(),
            class_id: class,
            instance_id: id,
            tp: size / 2,
            fn_: size - size / 2,
        }
    }

    #[test]
    fn imbalance_examples() {
        let groups: BTreeMap<u32, String> = [(0, "thing".to_string())].into_iter().collect();
        let r = size_imbalance(&[cell("a", 0, 1, 10), cell("b", 0, 1, 10)], 1, &groups).unwrap();
        assert_eq!((r.r_d[0], r.r_i[0]), (Some(1.0), Some(1.0)));
        assert_eq!(r.mean_log_ratio_by_group["thing"], 0.0);

        let r = size_imbalance(
            &[cell("a", 0, 1, 2), cell("a", 0, 2, 8), cell("b", 0, 1, 4)],
            1,
            &groups,
        )
        .unwrap();
        assert_eq!((r.r_d[0], r.r_i[0]), (Some(4.0), Some(4.0)));
        assert_eq!(r.mean_log_ratio_by_group["thing"], 0.0);

        let r = size_imbalance(&[cell("a", 0, 1, 1), cell("b", 0, 1, 100)], 2, &groups).unwrap();
        assert_eq!((r.r_d[0], r.r_i[0]), (Some(100.0), Some(1.0)));
        assert!((r.mean_log_ratio_by_group["thing"] - 100f64.ln()).abs() < 1e-12);
        assert_eq!(r.r_d[1], None);
    }

    #[test]
    fn coverage_examples() {
        let r = coverage_from_counts([4, 4, 4], 4).unwrap();
        assert_eq!((r.mean_coverage_pct, r.normalized_std_pct), (100.0, 0.0));
        let r = coverage_from_counts([1, 1], 2).unwrap();
        assert_eq!((r.mean_coverage_pct, r.normalized_std_pct), (50.0, 0.0));
        let r = coverage_from_counts([1, 3], 4).unwrap();
        assert_eq!((r.mean_coverage_pct, r.normalized_std_pct), (50.0, 50.0));
        assert!(coverage_from_counts(std::iter::empty(), 4).is_err());
    }

    #[test]
    fn coverage_ignores_pixel_counts() {
        let small = LabelMap::new(2, 1, vec![0, 1], Some(255)).unwrap();
        let big = LabelMap::new(3, 2, vec![0, 1, 1, 1, 255, 0], Some(255)).unwrap();
        assert_eq!(coverage([&small], 4).unwrap(), coverage([&big], 4).unwrap());
    }
}
