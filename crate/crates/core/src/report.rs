//! End-to-end evaluation of a manifest and deterministic report rendering.
//!
//! Images are decoded and counted in parallel, then every reduction runs
//! sequentially in manifest order, so the report does not depend on the
//! worker count. Metric values are rendered in percent with two decimals.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::analysis::{
    coverage_from_confusion, histogram, rank_worst_images, size_imbalance, CoverageReport, HistogramReport,
    ImbalanceReport, RankedImage, DEFAULT_BINS,
};
use crate::confusion::{accumulate, confuse_image, DatasetConfusion, ImageConfusion};
use crate::error::{Error, Result};
use crate::fine::{build_score_matrix_with, compute_fine_metrics, FineMetricReport};
use crate::instance::{
    compute_instance_metrics, extract_instance_cells, resolve_thing_classes, InstanceCell, InstanceExtraction,
    InstanceScoreSet, MislabelFinding,
};
use crate::io::{load_instance_map, load_label_map};
use crate::pixel::{compute_pixel_metrics, PixelMetricReport};
use crate::types::{DatasetManifest, ManifestEntry, NullSemantics, Score};
use crate::worst_case::{quantile_suite, QuantileReport, REPORTED_THRESHOLDS};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_TOP_WORST: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Overrides the manifest's NULL semantics.
    pub semantics: Option<NullSemantics>,
    pub bins: usize,
    pub top_worst: usize,
    /// Use instance annotations when the manifest provides them.
    pub instances: bool,
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            semantics: None,
            bins: DEFAULT_BINS,
            top_worst: DEFAULT_TOP_WORST,
            instances: true,
            jobs: 1,
        }
    }
}

/// Every computed view of one dataset/prediction-set pair.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub manifest_label: String,
    pub semantics: NullSemantics,
    pub class_names: Vec<String>,
    pub confusion: DatasetConfusion,
    pub pixel: PixelMetricReport,
    pub fine: FineMetricReport,
    pub instance: Option<InstanceScoreSet>,
    pub worst_case_i: QuantileReport,
    pub worst_case_c: QuantileReport,
    pub worst_case_k: Option<QuantileReport>,
    pub histogram: Option<HistogramReport>,
    pub imbalance: ImbalanceReport,
    pub coverage: CoverageReport,
    pub worst_images: Vec<RankedImage>,
    pub audit: Vec<MislabelFinding>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Runs `f` over the entries on `jobs` workers and returns results in entry
/// order; the first failing entry (in manifest order) wins.
fn for_each_entry<T, F>(manifest: &DatasetManifest, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&ManifestEntry) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = pool(jobs)?.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| f(e).map_err(|err| err.in_image(&e.id)))
            .collect()
    });
    results.into_iter().collect()
}

fn require_valid(manifest: &DatasetManifest, base_dir: &Path, require_predictions: bool) -> Result<()> {
    let findings = manifest.validate(base_dir, require_predictions);
    for f in &findings {
        log::error!("{f}");
    }
    if findings.is_empty() {
        Ok(())
    } else {
        Err(Error::ManifestInvalid(findings.len()))
    }
}

pub fn evaluate(
    manifest: &DatasetManifest,
    base_dir: &Path,
    manifest_label: &str,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    require_valid(manifest, base_dir, true)?;
    let c = manifest.num_classes;
    let use_instances = opts.instances && manifest.entries.iter().any(|e| e.instances.is_some());

    let per_image: Vec<(ImageConfusion, Option<InstanceExtraction>)> = for_each_entry(manifest, opts.jobs, |e| {
        let gt = load_label_map(&manifest.resolve(base_dir, &e.gt), c, manifest.ignore_id)?;
        let pred_path = e.pred.as_ref().expect("validated");
        let pred = load_label_map(&manifest.resolve(base_dir, pred_path), c, manifest.ignore_id)?;
        let confusion = confuse_image(&e.id, &gt, &pred, c)?;
        let extraction = match (&e.instances, use_instances) {
            (Some(p), true) => {
                let inst = load_instance_map(&manifest.resolve(base_dir, p), manifest.instance_encoding)?;
                Some(extract_instance_cells(&e.id, &gt, Some(&pred), &inst, c)?)
            }
            _ => None,
        };
        Ok((confusion, extraction))
    })?;

    let (images, extractions): (Vec<_>, Vec<_>) = per_image.into_iter().unzip();
    let extractions: Vec<InstanceExtraction> = extractions.into_iter().flatten().collect();
    let confusion = accumulate(images, c)?;
    evaluate_confusion(
        manifest,
        manifest_label,
        opts,
        confusion,
        use_instances.then_some(extractions),
    )
}

/// Builds every report from already-counted images.
pub fn evaluate_confusion(
    manifest: &DatasetManifest,
    manifest_label: &str,
    opts: &EvalOptions,
    confusion: DatasetConfusion,
    extractions: Option<Vec<InstanceExtraction>>,
) -> Result<Evaluation> {
    let c = manifest.num_classes;
    let semantics = opts.semantics.unwrap_or(manifest.null_semantics);
    let pixel = compute_pixel_metrics(&confusion)?;
    let sm = build_score_matrix_with(&confusion, |k| manifest.class_role(k), semantics, c)?;
    let fine = compute_fine_metrics(&sm)?;

    let things: BTreeSet<u32> = match &extractions {
        Some(ex) => resolve_thing_classes(manifest.thing_classes.as_deref(), ex),
        None => BTreeSet::new(),
    };
    let instance = match &extractions {
        Some(ex) => Some(compute_instance_metrics(ex, &fine, &things)?),
        None => None,
    };

    let image_scores: Vec<f64> = fine.iou_i_per_image.iter().filter_map(|s| s.as_option()).collect();
    let worst_case_i = quantile_suite(&[image_scores])?;
    let class_units: Vec<Vec<f64>> = (0..c).map(|k| fine.class_scores(k)).collect();
    let worst_case_c = quantile_suite(&class_units)?;
    let worst_case_k = match &instance {
        Some(set) => Some(quantile_suite(&set.per_class_units(&fine))?),
        None => None,
    };

    let histogram = match histogram(&fine.iou_i_per_image, opts.bins) {
        Ok(h) => Some(h),
        Err(e) => {
            log::info!("histogram skipped: {e}");
            None
        }
    };
    let worst_images = rank_worst_images(&fine, opts.top_worst.max(1))?;
    let coverage = coverage_from_confusion(&confusion)?;
    let imbalance = imbalance(&confusion, extractions.as_deref().unwrap_or(&[]), &things)?;
    let audit = instance.as_ref().map(|s| s.audit_findings.clone()).unwrap_or_default();

    Ok(Evaluation {
        manifest_label: manifest_label.to_string(),
        semantics,
        class_names: manifest.class_names.clone(),
        confusion,
        pixel,
        fine,
        instance,
        worst_case_i,
        worst_case_c,
        worst_case_k,
        histogram,
        imbalance,
        coverage,
        worst_images,
        audit,
    })
}

/// Size imbalance with thing classes measured on their instances and every
/// other class treated as one region per image.
fn imbalance(
    confusion: &DatasetConfusion,
    extractions: &[InstanceExtraction],
    things: &BTreeSet<u32>,
) -> Result<ImbalanceReport> {
    let mut cells: Vec<InstanceCell> = extractions
        .iter()
        .flat_map(|e| e.cells.iter().filter(|c| things.contains(&c.class_id)).cloned())
        .collect();
    for image in &confusion.per_image {
        for (class, cell) in image.cells.iter().enumerate() {
            if !things.contains(&(class as u32)) && cell.gt_pixels() > 0 {
                cells.push(InstanceCell {
                    image_id: image.image_id.clone(),
                    class_id: class as u32,
                    instance_id: 0,
                    tp: cell.tp,
                    fn_: cell.fn_,
                });
            }
        }
    }
    let groups: BTreeMap<u32, String> = (0..confusion.num_classes() as u32)
        .map(|c| (c, if things.contains(&c) { "thing" } else { "stuff" }.to_string()))
        .collect();
    size_imbalance(&cells, confusion.num_classes(), &groups)
}

/// Ground-truth/instance consistency check; predictions are not read.
pub fn audit(manifest: &DatasetManifest, base_dir: &Path, jobs: usize) -> Result<Vec<MislabelFinding>> {
    require_valid(manifest, base_dir, false)?;
    let c = manifest.num_classes;
    let extractions: Vec<Option<InstanceExtraction>> = for_each_entry(manifest, jobs, |e| {
        let Some(p) = &e.instances else { return Ok(None) };
        let gt = load_label_map(&manifest.resolve(base_dir, &e.gt), c, manifest.ignore_id)?;
        let inst = load_instance_map(&manifest.resolve(base_dir, p), manifest.instance_encoding)?;
        extract_instance_cells(&e.id, &gt, None, &inst, c).map(Some)
    })?;
    let extractions: Vec<InstanceExtraction> = extractions.into_iter().flatten().collect();
    let things = resolve_thing_classes(manifest.thing_classes.as_deref(), &extractions);
    let mut findings: Vec<MislabelFinding> = extractions.iter().flat_map(|e| e.findings(&things)).collect();
    findings.sort();
    Ok(findings)
}

/// Computes only what the image-level histogram needs.
pub fn histogram_only(manifest: &DatasetManifest, base_dir: &Path, opts: &EvalOptions) -> Result<HistogramReport> {
    require_valid(manifest, base_dir, true)?;
    let c = manifest.num_classes;
    let images = for_each_entry(manifest, opts.jobs, |e| {
        let gt = load_label_map(&manifest.resolve(base_dir, &e.gt), c, manifest.ignore_id)?;
        let pred = load_label_map(
            &manifest.resolve(base_dir, e.pred.as_ref().expect("validated")),
            c,
            manifest.ignore_id,
        )?;
        confuse_image(&e.id, &gt, &pred, c)
    })?;
    let confusion = accumulate(images, c)?;
    let semantics = opts.semantics.unwrap_or(manifest.null_semantics);
    let sm = build_score_matrix_with(&confusion, |k| manifest.class_role(k), semantics, c)?;
    let fine = compute_fine_metrics(&sm)?;
    histogram(&fine.iou_i_per_image, opts.bins)
}

/// A number rendered with a fixed count of decimals, or `null`.
#[derive(Debug, Clone, Copy)]
pub struct Fixed<const PLACES: usize>(pub Option<f64>);

/// A unit-interval score rendered in percent with two decimals.
pub type Pct = Fixed<2>;

impl<const P: usize> Fixed<P> {
    pub fn percent(s: Score) -> Self {
        Fixed(s.as_option().map(|v| v * 100.0))
    }

    pub fn percent_of(v: f64) -> Self {
        Fixed(Some(v * 100.0))
    }

    pub fn render(&self) -> Option<String> {
        let v = self.0.filter(|v| v.is_finite())?;
        let s = format!("{v:.P$}");
        // "-0.00" reads as a sign error
        Some(if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        })
    }
}

impl<const P: usize> Serialize for Fixed<P> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.render() {
            Some(text) => {
                let raw = serde_json::value::RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
                raw.serialize(s)
            }
            None => s.serialize_none(),
        }
    }
}

/// Threshold → value map emitted in threshold order as `{"q1": .., "q5": ..}`.
struct QuantileMap(Vec<(u32, Pct)>);

impl Serialize for QuantileMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (q, v) in &self.0 {
            map.serialize_entry(&format!("q{q}"), v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct QuantileJson {
    qbar: Pct,
    thresholds: QuantileMap,
}

impl QuantileJson {
    fn new(r: &QuantileReport) -> Self {
        Self {
            qbar: Pct::percent(r.miou_qbar),
            thresholds: QuantileMap(
                REPORTED_THRESHOLDS
                    .iter()
                    .map(|&q| (q, Pct::percent(r.at(q))))
                    .collect(),
            ),
        }
    }
}

#[derive(Serialize)]
struct WorstCaseJson {
    i: QuantileJson,
    c: QuantileJson,
    k: Option<QuantileJson>,
}

#[derive(Serialize)]
struct ClassJson<'a> {
    id: usize,
    name: &'a str,
    acc: Pct,
    iou_d: Pct,
    iou_c: Pct,
    iou_k: Pct,
    iou_c_qbar: Pct,
    iou_c_q5: Pct,
    iou_c_q1: Pct,
    images: usize,
    r_d: Fixed<4>,
    r_i: Fixed<4>,
}

#[derive(Serialize)]
struct ImageJson<'a> {
    id: &'a str,
    iou_i: Pct,
}

#[derive(Serialize)]
struct RankedJson<'a> {
    rank: usize,
    image_id: &'a str,
    iou_i: Pct,
}

#[derive(Serialize)]
pub struct StatsJson {
    min: Fixed<2>,
    max: Fixed<2>,
    mean: Fixed<2>,
    std: Fixed<2>,
    skew: Fixed<2>,
    kurtosis: Fixed<2>,
    degenerate: bool,
}

#[derive(Serialize)]
pub struct HistogramJson {
    edges: Vec<Fixed<2>>,
    counts: Vec<u64>,
    stats: StatsJson,
}

impl HistogramJson {
    pub fn new(h: &HistogramReport) -> Self {
        let f = |v: f64| Fixed(Some(v));
        Self {
            edges: h.bin_edges.iter().map(|&e| f(e)).collect(),
            counts: h.counts.clone(),
            stats: StatsJson {
                min: f(h.stats.min),
                max: f(h.stats.max),
                mean: f(h.stats.mean),
                std: f(h.stats.std),
                skew: f(h.stats.skew),
                kurtosis: f(h.stats.kurtosis),
                degenerate: h.stats.degenerate,
            },
        }
    }
}

#[derive(Serialize)]
struct CoverageJson {
    mean_pct: Fixed<2>,
    normalized_std_pct: Fixed<2>,
}

#[derive(Serialize)]
struct InstanceSummaryJson {
    thing_classes: Vec<u32>,
    instances: usize,
    /// Mean per-instance IoU under each FP allocation.
    mean_lower: Pct,
    mean_lower_integer: Pct,
    mean_proportional: Pct,
    mean_upper: Pct,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct AuditJson<'a> {
    image_id: &'a str,
    class: &'a str,
    class_id: u32,
    instance_id: Option<u32>,
    reason: u8,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    version: &'static str,
    manifest: &'a str,
    semantics: String,
    num_images: usize,
    num_classes: usize,
    acc: Pct,
    macc: Pct,
    miou_d: Pct,
    miou_i: Pct,
    miou_c: Pct,
    miou_k: Pct,
    miou_i_qbar: Pct,
    miou_i_q5: Pct,
    miou_i_q1: Pct,
    miou_c_qbar: Pct,
    miou_c_q5: Pct,
    miou_c_q1: Pct,
    miou_k_qbar: Pct,
    miou_k_q5: Pct,
    miou_k_q1: Pct,
    worst_case: WorstCaseJson,
    per_class: Vec<ClassJson<'a>>,
    per_image: Vec<ImageJson<'a>>,
    worst_images: Vec<RankedJson<'a>>,
    histogram: Option<HistogramJson>,
    coverage: CoverageJson,
    mean_log_size_ratio: BTreeMap<String, Fixed<4>>,
    instance_summary: Option<InstanceSummaryJson>,
    audit: Vec<AuditJson<'a>>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Score {
    Score::from_option(crate::types::anchored_mean(values).map(|m| m.clamp(0.0, 1.0)))
}

impl Evaluation {
    fn class_name(&self, c: u32) -> &str {
        self.class_names.get(c as usize).map_or("", String::as_str)
    }

    /// Deterministic JSON report (stable field order and number formatting).
    pub fn to_json(&self) -> String {
        let k = self.worst_case_k.as_ref();
        let k_at = |q: u32| k.map_or(Score::Null, |r| r.at(q));
        let wc_c = &self.worst_case_c;
        let per_class = (0..self.class_names.len())
            .map(|c| ClassJson {
                id: c,
                name: &self.class_names[c],
                acc: Pct::percent(self.pixel.acc_per_class[c]),
                iou_d: Pct::percent(self.pixel.iou_d[c]),
                iou_c: Pct::percent(self.fine.iou_c_per_class[c]),
                iou_k: Pct::percent(self.instance.as_ref().map_or(Score::Null, |s| s.per_class_k[c])),
                iou_c_qbar: Pct::percent(wc_c.per_class_qbar[c]),
                iou_c_q5: Pct::percent(wc_c.per_class_q[&5][c]),
                iou_c_q1: Pct::percent(wc_c.per_class_q[&1][c]),
                images: self.fine.image_class_counts[c],
                r_d: Fixed(self.imbalance.r_d[c]),
                r_i: Fixed(self.imbalance.r_i[c]),
            })
            .collect();
        let per_image = self
            .fine
            .image_ids()
            .iter()
            .zip(&self.fine.iou_i_per_image)
            .map(|(id, &s)| ImageJson {
                id,
                iou_i: Pct::percent(s),
            })
            .collect();
        let worst_images = self
            .worst_images
            .iter()
            .map(|r| RankedJson {
                rank: r.rank,
                image_id: &r.image_id,
                iou_i: Pct::percent_of(r.iou_i),
            })
            .collect();
        let instance_summary = self.instance.as_ref().map(|s| InstanceSummaryJson {
            thing_classes: s.thing_classes.iter().copied().collect(),
            instances: s.instances.len(),
            mean_lower: Pct::percent(mean_of(s.instances.iter().map(|i| i.lower))),
            mean_lower_integer: Pct::percent(mean_of(s.instances.iter().map(|i| i.lower_integer))),
            mean_proportional: Pct::percent(mean_of(s.instances.iter().map(|i| i.proportional))),
            mean_upper: Pct::percent(mean_of(s.instances.iter().map(|i| i.upper))),
            notes: s.notes.clone(),
        });
        let audit = self
            .audit
            .iter()
            .map(|f| AuditJson {
                image_id: &f.image_id,
                class: self.class_name(f.class_id),
                class_id: f.class_id,
                instance_id: f.instance_id,
                reason: f.reason.code(),
            })
            .collect();

        let report = ReportJson {
            version: TOOLKIT_VERSION,
            manifest: &self.manifest_label,
            semantics: self.semantics.to_string(),
            num_images: self.fine.score_matrix.num_images(),
            num_classes: self.class_names.len(),
            acc: Pct::percent_of(self.pixel.acc),
            macc: Pct::percent_of(self.pixel.macc),
            miou_d: Pct::percent_of(self.pixel.miou_d),
            miou_i: Pct::percent_of(self.fine.miou_i),
            miou_c: Pct::percent_of(self.fine.miou_c),
            miou_k: Fixed(self.instance.as_ref().map(|s| s.miou_k * 100.0)),
            miou_i_qbar: Pct::percent(self.worst_case_i.miou_qbar),
            miou_i_q5: Pct::percent(self.worst_case_i.at(5)),
            miou_i_q1: Pct::percent(self.worst_case_i.at(1)),
            miou_c_qbar: Pct::percent(wc_c.miou_qbar),
            miou_c_q5: Pct::percent(wc_c.at(5)),
            miou_c_q1: Pct::percent(wc_c.at(1)),
            miou_k_qbar: Pct::percent(k.map_or(Score::Null, |r| r.miou_qbar)),
            miou_k_q5: Pct::percent(k_at(5)),
            miou_k_q1: Pct::percent(k_at(1)),
            worst_case: WorstCaseJson {
                i: QuantileJson::new(&self.worst_case_i),
                c: QuantileJson::new(wc_c),
                k: k.map(QuantileJson::new),
            },
            per_class,
            per_image,
            worst_images,
            histogram: self.histogram.as_ref().map(HistogramJson::new),
            coverage: CoverageJson {
                mean_pct: Fixed(Some(self.coverage.mean_coverage_pct)),
                normalized_std_pct: Fixed(Some(self.coverage.normalized_std_pct)),
            },
            mean_log_size_ratio: self
                .imbalance
                .mean_log_ratio_by_group
                .iter()
                .map(|(g, &v)| (g.clone(), Fixed(Some(v))))
                .collect(),
            instance_summary,
            audit,
        };
        let mut out = serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
        out.push('\n');
        out
    }

    /// Rows = images, columns = classes, NULL as an empty field.
    pub fn score_matrix_csv(&self) -> Result<String> {
        let sm = &self.fine.score_matrix;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["image_id".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, id) in sm.image_ids().iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(sm.row(i).iter().map(|&s| Pct::percent(s).render().unwrap_or_default()));
            w.write_record(&row).map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn per_class_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "class_id",
            "name",
            "acc",
            "iou_d",
            "iou_c",
            "iou_k",
            "iou_c_qbar",
            "iou_c_q5",
            "iou_c_q1",
            "images",
        ])
        .map_err(csv_err)?;
        let cell = |s: Score| Pct::percent(s).render().unwrap_or_default();
        for (c, name) in self.class_names.iter().enumerate() {
            let iou_k = self.instance.as_ref().map_or(Score::Null, |s| s.per_class_k[c]);
            w.write_record([
                c.to_string(),
                name.clone(),
                cell(self.pixel.acc_per_class[c]),
                cell(self.pixel.iou_d[c]),
                cell(self.fine.iou_c_per_class[c]),
                cell(iou_k),
                cell(self.worst_case_c.per_class_qbar[c]),
                cell(self.worst_case_c.per_class_q[&5][c]),
                cell(self.worst_case_c.per_class_q[&1][c]),
                self.fine.image_class_counts[c].to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// `rank,image_id,iou_i`.
    pub fn worst_images_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "image_id", "iou_i"]).map_err(csv_err)?;
        for r in &self.worst_images {
            w.write_record([
                r.rank.to_string(),
                r.image_id.clone(),
                Pct::percent_of(r.iou_i).render().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Per-instance IoU under each allocation, or `None` without instance data.
    pub fn instances_csv(&self) -> Result<Option<String>> {
        let Some(set) = &self.instance else { return Ok(None) };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "image_id",
            "class",
            "instance_id",
            "lower",
            "lower_integer",
            "proportional",
            "upper",
        ])
        .map_err(csv_err)?;
        for s in &set.instances {
            let p = |v: f64| Pct::percent_of(v).render().unwrap_or_default();
            w.write_record([
                s.image_id.clone(),
                self.class_name(s.class_id).to_string(),
                s.instance_id.to_string(),
                p(s.lower),
                p(s.lower_integer),
                p(s.proportional),
                p(s.upper),
            ])
            .map_err(csv_err)?;
        }
        finish(w).map(Some)
    }
}

/// Audit rows `image_id,class,instance_id,reason` with reason codes 1
/// (instance only) and 2 (image only).
pub fn audit_csv(findings: &[MislabelFinding], class_names: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "class", "instance_id", "reason"])
        .map_err(csv_err)?;
    for f in findings {
        let class = class_names
            .get(f.class_id as usize)
            .cloned()
            .unwrap_or_else(|| f.class_id.to_string());
        w.write_record([
            f.image_id.clone(),
            class,
            f.instance_id.map(|i| i.to_string()).unwrap_or_default(),
            f.reason.code().to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn histogram_json(h: &HistogramReport) -> String {
    let mut out = serde_json::to_string_pretty(&HistogramJson::new(h)).expect("histogram serialization cannot fail");
    out.push('\n');
    out
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv input is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_rendering() {
        assert_eq!(Pct::percent(Score::Value(0.5)).render().as_deref(), Some("50.00"));
        assert_eq!(Pct::percent(Score::Null).render(), None);
        assert_eq!(Fixed::<2>(Some(-0.001)).render().as_deref(), Some("0.00"));
        assert_eq!(Fixed::<4>(Some(4.60517)).render().as_deref(), Some("4.6052"));
        assert_eq!(Fixed::<2>(Some(f64::NAN)).render(), None);
        let json = serde_json::to_string(&vec![Pct::percent_of(0.25), Fixed::<2>(None)]).unwrap();
        assert_eq!(json, "[25.00,null]");
    }

    #[test]
    fn audit_csv_shape() {
        let findings = vec![MislabelFinding {
            image_id: "frankfurt_000001".into(),
            class_id: 1,
            instance_id: Some(26000),
            reason: crate::instance::MislabelReason::PresentInInstanceOnly,
        }];
        let text = audit_csv(&findings, &["road".into(), "car".into()]).unwrap();
        assert_eq!(
            text,
            "image_id,class,instance_id,reason\nfrankfurt_000001,car,26000,1\n"
        );
        assert_eq!(audit_csv(&[], &[]).unwrap(), "image_id,class,instance_id,reason\n");
    }
}
