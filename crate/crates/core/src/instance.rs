//! Approximate per-instance IoU.
//!
//! TP and FN are exact per ground-truth instance, but false positives are
//! only known per (image, class). They are split across the instances of the
//! class either proportionally to instance size, or so as to minimise or
//! maximise the summed instance IoU (lower/upper bounds).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fine::FineMetricReport;
use crate::types::{mean_non_null, require_same_shape, InstanceMap, LabelMap, Score};

/// Exact overlap counts of one ground-truth instance with the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceOverlap {
    pub tp: u64,
    pub fn_: u64,
}

impl InstanceOverlap {
    pub const fn new(tp: u64, fn_: u64) -> Self {
        Self { tp, fn_ }
    }

    pub fn size(&self) -> u64 {
        self.tp + self.fn_
    }

    /// IoU of the instance when `fp` false-positive pixels are charged to it.
    pub fn iou(&self, fp: f64) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.size() as f64 + fp)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstanceCell {
    pub image_id: String,
    pub class_id: u32,
    pub instance_id: u32,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl InstanceCell {
    pub fn size(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn overlap(&self) -> InstanceOverlap {
        InstanceOverlap::new(self.tp, self.fn_)
    }
}

/// Direction of an image-level vs instance-level label disagreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum MislabelReason {
    /// The instance annotation claims the class, the pixel labels do not (code 1).
    PresentInInstanceOnly,
    /// The pixel labels contain the class, no instance of it exists (code 2).
    PresentInImageOnly,
}

impl MislabelReason {
    pub fn code(self) -> u8 {
        match self {
            MislabelReason::PresentInInstanceOnly => 1,
            MislabelReason::PresentInImageOnly => 2,
        }
    }
}

impl fmt::Display for MislabelReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct MislabelFinding {
    pub image_id: String,
    pub class_id: u32,
    pub instance_id: Option<u32>,
    pub reason: MislabelReason,
}

/// Everything instance-level that one image contributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceExtraction {
    pub image_id: String,
    /// Cells ordered by (class, instance id).
    pub cells: Vec<InstanceCell>,
    /// Image-level false positives per class.
    pub fp: Vec<u64>,
    /// Instances whose class has no ground-truth pixel inside the instance.
    pub instance_only: Vec<MislabelFinding>,
    /// Classes with ground-truth pixels but no instance in this image.
    pub uninstanced_classes: Vec<u32>,
    /// Classes named by the instance table, whether or not they occur.
    pub declared_classes: BTreeSet<u32>,
}

impl InstanceExtraction {
    /// Audit findings, treating only `thing_classes` as requiring instances.
    pub fn findings(&self, thing_classes: &BTreeSet<u32>) -> Vec<MislabelFinding> {
        let mut out = self.instance_only.clone();
        out.extend(
            self.uninstanced_classes
                .iter()
                .filter(|c| thing_classes.contains(c))
                .map(|&class_id| MislabelFinding {
                    image_id: self.image_id.clone(),
                    class_id,
                    instance_id: None,
                    reason: MislabelReason::PresentInImageOnly,
                }),
        );
        out.sort();
        out
    }
}

#[derive(Default)]
struct InstanceTally {
    class: u32,
    tp: u64,
    size: u64,
}

/// Splits ground truth into per-instance TP/FN and collects label disagreements.
///
/// An instance of class `c` covers the pixels of its mask whose ground-truth
/// label is `c`; pixels under the ignore id are dropped. Without a prediction
/// every cell has `tp = 0` and all false-positive counts are zero, which is
/// enough for auditing.
pub fn extract_instance_cells(
    image_id: &str,
    gt: &LabelMap,
    pred: Option<&LabelMap>,
    inst: &InstanceMap,
    num_classes: usize,
) -> Result<InstanceExtraction> {
    let gt_shape = (gt.width(), gt.height());
    require_same_shape("gt", gt_shape, "instances", (inst.width(), inst.height()))?;
    if let Some(p) = pred {
        require_same_shape("gt", gt_shape, "pred", (p.width(), p.height()))?;
    }
    for (&id, &class) in inst.instance_classes() {
        if class as usize >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "instance {id} has class {class}, out of range for {num_classes} classes"
            )));
        }
    }

    let mut tallies: Vec<(u32, InstanceTally)> = Vec::new();
    let mut slot_of: HashMap<u32, usize> = HashMap::new();
    let mut last: Option<(u32, usize)> = None;
    let mut fp = vec![0u64; num_classes];
    let mut gt_classes = vec![false; num_classes];
    let ignore = gt.ignore_id();
    let pred_ignore = pred.and_then(LabelMap::ignore_id);

    for (idx, (&g, &k)) in gt.labels().iter().zip(inst.instance_ids()).enumerate() {
        let p = pred.map(|p| p.labels()[idx]);
        if let Some(p) = p {
            if Some(p) != pred_ignore && p as usize >= num_classes {
                return Err(pred.unwrap().out_of_range("pred", idx, num_classes));
            }
        }
        if k != 0 {
            // registered even when every pixel is ignored, so it can be audited
            let slot = match last {
                Some((id, slot)) if id == k => slot,
                _ => {
                    let slot = *slot_of.entry(k).or_insert_with(|| {
                        let class = inst.class_of(k).expect("validated by InstanceMap");
                        tallies.push((
                            k,
                            InstanceTally {
                                class,
                                ..Default::default()
                            },
                        ));
                        tallies.len() - 1
                    });
                    last = Some((k, slot));
                    slot
                }
            };
            let t = &mut tallies[slot].1;
            if Some(g) != ignore && g == t.class {
                t.size += 1;
                if p == Some(t.class) {
                    t.tp += 1;
                }
            }
        }
        if Some(g) == ignore {
            continue;
        }
        if g as usize >= num_classes {
            return Err(gt.out_of_range("gt", idx, num_classes));
        }
        gt_classes[g as usize] = true;
        if let Some(p) = p {
            if p != g && Some(p) != pred_ignore {
                fp[p as usize] += 1;
            }
        }
    }

    let mut ordered = tallies;
    ordered.sort_by_key(|(id, t)| (t.class, *id));

    let mut cells = Vec::new();
    let mut instance_only = Vec::new();
    let mut instanced = vec![false; num_classes];
    for (id, t) in ordered {
        instanced[t.class as usize] = true;
        if t.size == 0 {
            instance_only.push(MislabelFinding {
                image_id: image_id.to_string(),
                class_id: t.class,
                instance_id: Some(id),
                reason: MislabelReason::PresentInInstanceOnly,
            });
        } else {
            cells.push(InstanceCell {
                image_id: image_id.to_string(),
                class_id: t.class,
                instance_id: id,
                tp: t.tp,
                fn_: t.size - t.tp,
            });
        }
    }
    let uninstanced_classes = (0..num_classes)
        .filter(|&c| gt_classes[c] && !instanced[c])
        .map(|c| c as u32)
        .collect();

    Ok(InstanceExtraction {
        image_id: image_id.to_string(),
        cells,
        fp,
        instance_only,
        uninstanced_classes,
        declared_classes: inst.instance_classes().values().copied().collect(),
    })
}

/// Real-valued FP split and the resulting instance IoUs.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalAllocation {
    pub fp: Vec<f64>,
    pub ious: Vec<f64>,
    pub total: f64,
}

/// Integer FP split and the resulting instance IoUs.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerAllocation {
    pub fp: Vec<u64>,
    pub ious: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

fn require_cells(cells: &[InstanceOverlap]) -> Result<()> {
    if cells.is_empty() {
        return Err(Error::EmptyInput("instance group"));
    }
    if cells.iter().any(|c| c.size() == 0) {
        return Err(Error::InvalidArgument("instance with zero size".into()));
    }
    Ok(())
}

fn fractional(cells: &[InstanceOverlap], fp: Vec<f64>) -> FractionalAllocation {
    let ious: Vec<f64> = cells.iter().zip(&fp).map(|(c, &f)| c.iou(f)).collect();
    let total = ious.iter().sum();
    FractionalAllocation { fp, ious, total }
}

fn integer(cells: &[InstanceOverlap], fp: Vec<u64>) -> IntegerAllocation {
    let ious: Vec<f64> = cells.iter().zip(&fp).map(|(c, &f)| c.iou(f as f64)).collect();
    let total = ious.iter().sum();
    IntegerAllocation { fp, ious, total }
}

/// Charges each instance `S_k / ΣS` of the image-level false positives.
pub fn distribute_fp_proportional(cells: &[InstanceOverlap], fp: f64) -> Result<FractionalAllocation> {
    require_cells(cells)?;
    let total_size: u64 = cells.iter().map(InstanceOverlap::size).sum();
    let alloc = cells.iter().map(|c| c.size() as f64 / total_size as f64 * fp).collect();
    Ok(fractional(cells, alloc))
}

/// Minimum of Σ_k IoU_k over real-valued allocations (water-filling).
///
/// Stationarity gives `S_k + f_k = t·sqrt(TP_k)` on every instance that
/// receives false positives; `t` is found by scanning instances in order of
/// their activation threshold `S_k / sqrt(TP_k)`. Instances with `TP = 0`
/// score 0 whatever they receive and are left at zero.
pub fn distribute_fp_continuous_min(cells: &[InstanceOverlap], fp: f64) -> Result<FractionalAllocation> {
    require_cells(cells)?;
    if fp < 0.0 {
        return Err(Error::InvalidArgument(format!("negative fp {fp}")));
    }
    let mut active: Vec<(usize, f64, f64)> = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.tp > 0)
        .map(|(i, c)| {
            let root = (c.tp as f64).sqrt();
            (i, c.size() as f64 / root, root)
        })
        .collect();
    if active.is_empty() {
        // objective is identically zero
        return distribute_fp_proportional(cells, fp);
    }
    active.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut sum_size = 0.0;
    let mut sum_root = 0.0;
    let mut level = 0.0;
    for (m, &(i, _, root)) in active.iter().enumerate() {
        sum_size += cells[i].size() as f64;
        sum_root += root;
        level = (fp + sum_size) / sum_root;
        if active.get(m + 1).is_none_or(|next| level <= next.1) {
            break;
        }
    }

    let mut alloc = vec![0.0; cells.len()];
    for &(i, _, root) in &active {
        alloc[i] = (level * root - cells[i].size() as f64).max(0.0);
    }
    Ok(fractional(cells, alloc))
}

#[derive(PartialEq)]
struct Gain {
    value: f64,
    index: usize,
}

impl Eq for Gain {}

impl Ord for Gain {
    fn cmp(&self, other: &Self) -> Ordering {
        // larger gain first, then lower index
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Decrease of `tp / (s + f)` when one more pixel is charged.
fn unit_gain(c: &InstanceOverlap, f: u64) -> f64 {
    let d = (c.size() + f) as f64;
    c.tp as f64 / (d * (d + 1.0))
}

/// Integer FP split minimising or maximising Σ_k IoU_k.
///
/// Each term is convex and decreasing in its allocation. Minimisation is
/// therefore solved exactly by handing out pixels one at a time to the
/// instance with the largest marginal decrease. The maximum of a convex
/// function over the simplex sits at a vertex, so maximisation tries every
/// "all FP to one instance" allocation. Ties resolve to the lowest index.
pub fn distribute_fp_extremal(cells: &[InstanceOverlap], fp: u64, sense: Sense) -> Result<IntegerAllocation> {
    require_cells(cells)?;
    match sense {
        Sense::Min => {
            let mut alloc = vec![0u64; cells.len()];
            let mut heap: BinaryHeap<Gain> = cells
                .iter()
                .enumerate()
                .map(|(index, c)| Gain {
                    value: unit_gain(c, 0),
                    index,
                })
                .collect();
            for _ in 0..fp {
                let best = heap.pop().expect("heap holds one entry per instance");
                alloc[best.index] += 1;
                heap.push(Gain {
                    value: unit_gain(&cells[best.index], alloc[best.index]),
                    index: best.index,
                });
            }
            Ok(integer(cells, alloc))
        }
        Sense::Max => {
            let mut best: Option<IntegerAllocation> = None;
            for k in 0..cells.len() {
                let mut alloc = vec![0u64; cells.len()];
                alloc[k] = fp;
                let candidate = integer(cells, alloc);
                if best.as_ref().is_none_or(|b| candidate.total > b.total) {
                    best = Some(candidate);
                }
            }
            Ok(best.expect("cells nonempty"))
        }
    }
}

/// Per-instance IoU under each allocation scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceScore {
    pub image_id: String,
    pub class_id: u32,
    pub instance_id: u32,
    pub proportional: f64,
    /// Continuous-relaxation minimum.
    pub lower: f64,
    /// Integer greedy minimum.
    pub lower_integer: f64,
    pub upper: f64,
}

/// Summed instance IoU of one (image, class) group under each scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupBounds {
    pub image_id: String,
    pub class_id: u32,
    pub fp: u64,
    pub lower: f64,
    pub lower_integer: f64,
    pub proportional: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceScoreSet {
    pub instances: Vec<InstanceScore>,
    pub groups: Vec<GroupBounds>,
    /// IoU_c^K: instance mean for thing classes, IoU_c^C for the rest.
    pub per_class_k: Vec<Score>,
    pub miou_k: f64,
    pub thing_classes: BTreeSet<u32>,
    pub audit_findings: Vec<MislabelFinding>,
    pub notes: Vec<String>,
}

impl InstanceScoreSet {
    /// Scores feeding worst-case K metrics: instance IoUs for thing classes,
    /// per-image class scores for the others.
    pub fn per_class_units(&self, fine: &FineMetricReport) -> Vec<Vec<f64>> {
        let c = self.per_class_k.len();
        let mut units: Vec<Vec<f64>> = vec![Vec::new(); c];
        for s in &self.instances {
            units[s.class_id as usize].push(s.proportional);
        }
        for (class, u) in units.iter_mut().enumerate() {
            if !self.thing_classes.contains(&(class as u32)) {
                *u = fine.class_scores(class);
            }
        }
        units
    }
}

/// Thing classes: the explicit list if given, else every class named in any instance table.
pub fn resolve_thing_classes(explicit: Option<&[u32]>, extractions: &[InstanceExtraction]) -> BTreeSet<u32> {
    match explicit {
        Some(list) => list.iter().copied().collect(),
        None => extractions
            .iter()
            .flat_map(|e| e.declared_classes.iter().copied())
            .collect(),
    }
}

pub fn compute_instance_metrics(
    extractions: &[InstanceExtraction],
    fine: &FineMetricReport,
    thing_classes: &BTreeSet<u32>,
) -> Result<InstanceScoreSet> {
    let num_classes = fine.iou_c_per_class.len();
    if let Some(&bad) = thing_classes.iter().find(|&&t| t as usize >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "thing class {bad} out of range for {num_classes} classes"
        )));
    }
    let mut sums = vec![(0.0f64, 0usize); num_classes];
    let mut instances = Vec::new();
    let mut groups = Vec::new();
    let mut audit_findings = Vec::new();

    for ex in extractions {
        if ex.fp.len() != num_classes {
            return Err(Error::ClassCountMismatch {
                expected: num_classes,
                found: ex.fp.len(),
            });
        }
        audit_findings.extend(ex.findings(thing_classes));

        let mut by_class: BTreeMap<u32, Vec<&InstanceCell>> = BTreeMap::new();
        for cell in &ex.cells {
            if thing_classes.contains(&cell.class_id) {
                by_class.entry(cell.class_id).or_default().push(cell);
            }
        }
        for (class, group) in by_class {
            let overlaps: Vec<InstanceOverlap> = group.iter().map(|c| c.overlap()).collect();
            let fp = ex.fp[class as usize];
            let prop = distribute_fp_proportional(&overlaps, fp as f64)?;
            let lower = distribute_fp_continuous_min(&overlaps, fp as f64)?;
            let lower_int = distribute_fp_extremal(&overlaps, fp, Sense::Min)?;
            let upper = distribute_fp_extremal(&overlaps, fp, Sense::Max)?;

            for (k, cell) in group.iter().enumerate() {
                instances.push(InstanceScore {
                    image_id: ex.image_id.clone(),
                    class_id: class,
                    instance_id: cell.instance_id,
                    proportional: prop.ious[k],
                    lower: lower.ious[k],
                    lower_integer: lower_int.ious[k],
                    upper: upper.ious[k],
                });
                let s = &mut sums[class as usize];
                s.0 += prop.ious[k];
                s.1 += 1;
            }
            groups.push(GroupBounds {
                image_id: ex.image_id.clone(),
                class_id: class,
                fp,
                lower: lower.total,
                lower_integer: lower_int.total,
                proportional: prop.total,
                upper: upper.total,
            });
        }
    }

    let mut notes = Vec::new();
    let per_class_k: Vec<Score> = (0..num_classes)
        .map(|c| {
            if !thing_classes.contains(&(c as u32)) {
                return fine.iou_c_per_class[c];
            }
            let (sum, n) = sums[c];
            if n == 0 {
                notes.push(format!("thing class {c} has no instances in the dataset"));
                Score::Null
            } else {
                Score::value((sum / n as f64).min(1.0))
            }
        })
        .collect();
    for note in &notes {
        log::warn!("{note}");
    }
    let miou_k = mean_non_null(per_class_k.iter().copied()).ok_or(Error::NoScorableContent)?;
    audit_findings.sort();

    Ok(InstanceScoreSet {
        instances,
        groups,
        per_class_k,
        miou_k,
        thing_classes: thing_classes.clone(),
        audit_findings,
        notes,
    })
}
