//! Shared domain types: label maps, confusion counts, NULL-aware scores and
//! the dataset manifest.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ignore label used when a manifest does not override it.
pub const DEFAULT_IGNORE_ID: u32 = 255;

/// Per-pixel class ids for one image, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    ignore_id: Option<u32>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, labels: Vec<u32>, ignore_id: Option<u32>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        Ok(Self {
            width,
            height,
            labels,
            ignore_id,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn ignore_id(&self) -> Option<u32> {
        self.ignore_id
    }

    pub fn is_ignore(&self, label: u32) -> bool {
        self.ignore_id == Some(label)
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Checks that every non-ignore label is a valid dense class id.
    pub fn validate(&self, num_classes: usize, which: &'static str) -> Result<()> {
        for (idx, &label) in self.labels.iter().enumerate() {
            if !self.is_ignore(label) && label as usize >= num_classes {
                return Err(self.out_of_range(which, idx, num_classes));
            }
        }
        Ok(())
    }

    pub(crate) fn out_of_range(&self, which: &'static str, idx: usize, num_classes: usize) -> Error {
        let w = self.width as usize;
        Error::LabelOutOfRange {
            map: which,
            label: self.labels[idx],
            x: (idx % w) as u32,
            y: (idx / w) as u32,
            num_classes,
        }
    }

    /// Distinct non-ignore classes present in the map.
    pub fn classes_present(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().filter(|&l| !self.is_ignore(l)).collect()
    }

    pub fn same_shape(&self, other_w: u32, other_h: u32) -> bool {
        self.width == other_w && self.height == other_h
    }
}

fn check_dims(width: u32, height: u32, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "width and height must be positive".into(),
        });
    }
    if (width as usize) * (height as usize) != len {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: format!("grid holds {len} values"),
        });
    }
    Ok(())
}

pub(crate) fn require_same_shape(
    left: &'static str,
    (left_w, left_h): (u32, u32),
    right: &'static str,
    (right_w, right_h): (u32, u32),
) -> Result<()> {
    if left_w != right_w || left_h != right_h {
        return Err(Error::DimensionMismatch {
            left,
            left_w,
            left_h,
            right,
            right_w,
            right_h,
        });
    }
    Ok(())
}

/// Per-pixel instance ids (0 = no instance) plus the id → class table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: u32,
    height: u32,
    instance_ids: Vec<u32>,
    instance_classes: BTreeMap<u32, u32>,
}

impl InstanceMap {
    pub fn new(width: u32, height: u32, instance_ids: Vec<u32>, instance_classes: BTreeMap<u32, u32>) -> Result<Self> {
        check_dims(width, height, instance_ids.len())?;
        // Report the smallest offending id so the error is deterministic.
        let mut last_known = 0;
        let missing = instance_ids
            .iter()
            .filter(|&&id| {
                // ids come in runs; skip the lookup while the run lasts
                if id == 0 || id == last_known {
                    return false;
                }
                let known = instance_classes.contains_key(&id);
                if known {
                    last_known = id;
                }
                !known
            })
            .min();
        if let Some(&id) = missing {
            return Err(Error::UnknownInstance { id });
        }
        Ok(Self {
            width,
            height,
            instance_ids,
            instance_classes,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn instance_ids(&self) -> &[u32] {
        &self.instance_ids
    }

    pub fn instance_classes(&self) -> &BTreeMap<u32, u32> {
        &self.instance_classes
    }

    pub fn class_of(&self, instance_id: u32) -> Option<u32> {
        self.instance_classes.get(&instance_id).copied()
    }

    /// Instance ids that actually occur in the grid, ascending.
    pub fn instances_present(&self) -> BTreeSet<u32> {
        self.instance_ids.iter().copied().filter(|&id| id != 0).collect()
    }
}

/// Exact pixel counts for one (image, class) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCell {
    pub const fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    pub fn gt_pixels(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn pred_pixels(&self) -> u64 {
        self.tp + self.fp
    }
}

impl std::ops::AddAssign for ConfusionCell {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

/// A score in `[0, 1]` or NULL. NULL never takes part in arithmetic: callers
/// aggregating scores must filter it out explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Score {
    Value(f64),
    #[default]
    Null,
}

impl Score {
    /// Builds a value, clamping nothing: out-of-range input is a bug.
    pub fn value(v: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&v), "score {v} outside [0, 1]");
        Score::Value(v)
    }

    pub fn from_option(v: Option<f64>) -> Self {
        v.map_or(Score::Null, Score::value)
    }

    pub fn as_option(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Null => None,
        }
    }

    pub fn is_null(self) -> bool {
        matches!(self, Score::Null)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v}"),
            Score::Null => f.write_str("NULL"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Score::Value(v) => s.serialize_f64(*v),
            Score::Null => s.serialize_none(),
        }
    }
}

/// Arithmetic mean anchored at the first value, so a constant sample
/// averages to exactly that constant.
pub fn anchored_mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let mut it = values.into_iter();
    let anchor = it.next()?;
    let (dev, n) = it.fold((0.0, 1usize), |(s, n), v| (s + (v - anchor), n + 1));
    Some(anchor + dev / n as f64)
}

/// Mean of the non-NULL scores, or `None` when every score is NULL.
pub fn mean_non_null<I: IntoIterator<Item = Score>>(scores: I) -> Option<f64> {
    anchored_mean(scores.into_iter().filter_map(Score::as_option)).map(|m| m.clamp(0.0, 1.0))
}

/// I x C table of per-image-per-class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    image_ids: Vec<String>,
    num_classes: usize,
    entries: Vec<Score>,
}

impl ScoreMatrix {
    pub fn new(image_ids: Vec<String>, num_classes: usize, entries: Vec<Score>) -> Result<Self> {
        if entries.len() != image_ids.len() * num_classes {
            return Err(Error::LengthMismatch {
                left: entries.len(),
                right: image_ids.len() * num_classes,
            });
        }
        Ok(Self {
            image_ids,
            num_classes,
            entries,
        })
    }

    /// Builds a matrix from rows, one per image.
    pub fn from_rows(image_ids: Vec<String>, rows: Vec<Vec<Score>>) -> Result<Self> {
        let num_classes = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != num_classes) {
            return Err(Error::ClassCountMismatch {
                expected: num_classes,
                found: bad.len(),
            });
        }
        Self::new(image_ids, num_classes, rows.into_iter().flatten().collect())
    }

    pub fn num_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn get(&self, image: usize, class: usize) -> Score {
        self.entries[image * self.num_classes + class]
    }

    pub fn row(&self, image: usize) -> &[Score] {
        &self.entries[image * self.num_classes..(image + 1) * self.num_classes]
    }

    pub fn column(&self, class: usize) -> impl Iterator<Item = Score> + '_ {
        self.entries
            .iter()
            .skip(class)
            .step_by(self.num_classes.max(1))
            .copied()
    }

    pub fn entries(&self) -> &[Score] {
        &self.entries
    }
}

/// Multi-class versus foreground/background scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentationMode {
    #[serde(rename = "multiclass")]
    MultiClass,
    #[serde(rename = "binary")]
    Binary { foreground: u32 },
}

/// How a class missing from the ground truth but predicted is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullSemantics {
    /// Pure false-positive classes score NULL.
    #[default]
    Ours,
    /// Pure false-positive classes score 0.
    Csurka,
}

impl fmt::Display for NullSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NullSemantics::Ours => "ours",
            NullSemantics::Csurka => "csurka",
        })
    }
}

/// Encoding of instance annotation files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceEncoding {
    /// Instance-id PNG/raw grid plus a `<stem>.json` sidecar mapping id to class.
    #[default]
    #[serde(rename = "sidecar")]
    Sidecar,
    /// `id = class * divisor + index`; ids below `divisor` carry no instance.
    #[serde(rename = "panoptic")]
    Panoptic { divisor: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub gt: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<PathBuf>,
}

fn default_ignore() -> Option<u32> {
    Some(DEFAULT_IGNORE_ID)
}

fn is_default_encoding(e: &InstanceEncoding) -> bool {
    *e == InstanceEncoding::Sidecar
}

/// A dataset/prediction-set pair to evaluate. Paths are relative to the
/// manifest file's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub mode: SegmentationMode,
    #[serde(default)]
    pub null_semantics: NullSemantics,
    #[serde(default = "default_ignore")]
    pub ignore_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thing_classes: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "is_default_encoding")]
    pub instance_encoding: InstanceEncoding,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ManifestParse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn resolve(&self, base_dir: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        }
    }

    /// Role of `class` under the manifest's segmentation mode.
    pub fn class_role(&self, class: usize) -> ClassRole {
        match self.mode {
            SegmentationMode::MultiClass => ClassRole::MultiClass,
            SegmentationMode::Binary { foreground } if foreground as usize == class => ClassRole::BinaryForeground,
            SegmentationMode::Binary { .. } => ClassRole::BinaryBackground,
        }
    }

    /// Checks structural invariants and that referenced files exist.
    ///
    /// Prediction paths are only required when `require_predictions` is set,
    /// so a ground-truth-only manifest can still be audited.
    pub fn validate(&self, base_dir: &Path, require_predictions: bool) -> Vec<ValidationFinding> {
        let mut findings = Vec::new();
        let c = self.num_classes;
        if c < 1 {
            findings.push(ValidationFinding::global(
                "num_classes",
                "num_classes must be at least 1",
            ));
        }
        if self.class_names.len() != c {
            findings.push(ValidationFinding::global(
                "class_names",
                format!("{} class names given for {c} classes", self.class_names.len()),
            ));
        }
        if let SegmentationMode::Binary { foreground } = self.mode {
            if c < 2 {
                findings.push(ValidationFinding::global(
                    "binary",
                    "binary mode requires at least 2 classes",
                ));
            }
            if foreground as usize >= c {
                findings.push(ValidationFinding::global(
                    "binary",
                    format!("foreground class {foreground} out of range for {c} classes"),
                ));
            }
        }
        if let Some(ignore) = self.ignore_id {
            if (ignore as usize) < c {
                findings.push(ValidationFinding::global(
                    "ignore_id",
                    format!("ignore id {ignore} collides with a class id"),
                ));
            }
        }
        if let Some(things) = &self.thing_classes {
            for &t in things {
                if t as usize >= c {
                    findings.push(ValidationFinding::global(
                        "thing_classes",
                        format!("thing class {t} out of range for {c} classes"),
                    ));
                }
            }
        }
        if let InstanceEncoding::Panoptic { divisor } = self.instance_encoding {
            if divisor == 0 {
                findings.push(ValidationFinding::global(
                    "instance_encoding",
                    "panoptic divisor must be positive",
                ));
            }
        }
        if self.entries.is_empty() {
            findings.push(ValidationFinding::global("entries", "manifest lists no images"));
        }

        let mut seen = HashSet::new();
        for entry in &self.entries {
            if !seen.insert(entry.id.as_str()) {
                findings.push(ValidationFinding::entry(&entry.id, "unique_id", "duplicate image id"));
            }
            let mut paths: Vec<(&str, &Path)> = vec![("gt", &entry.gt)];
            match &entry.pred {
                Some(p) => paths.push(("pred", p)),
                None if require_predictions => findings.push(ValidationFinding::entry(
                    &entry.id,
                    "path_exists",
                    "prediction path missing",
                )),
                None => {}
            }
            if let Some(p) = &entry.instances {
                paths.push(("instances", p));
            }
            for (field, path) in paths {
                let full = self.resolve(base_dir, path);
                if !full.is_file() {
                    findings.push(ValidationFinding::entry(
                        &entry.id,
                        "path_exists",
                        format!("{field} file {} not found", full.display()),
                    ));
                }
            }
        }
        findings
    }
}

/// How a class is scored when a cell has empty ground truth or prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassRole {
    MultiClass,
    BinaryForeground,
    BinaryBackground,
}

/// One violated manifest rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationFinding {
    /// Offending entry id, `None` for manifest-wide rules.
    pub entry: Option<String>,
    pub rule: String,
    pub message: String,
}

impl ValidationFinding {
    fn global(rule: &str, message: impl Into<String>) -> Self {
        Self {
            entry: None,
            rule: rule.to_string(),
            message: message.into(),
        }
    }

    fn entry(id: &str, rule: &str, message: impl Into<String>) -> Self {
        Self {
            entry: Some(id.to_string()),
            rule: rule.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.entry {
            Some(id) => write!(f, "entry '{id}': [{}] {}", self.rule, self.message),
            None => write!(f, "[{}] {}", self.rule, self.message),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(dir: &Path) -> DatasetManifest {
        for name in ["a_gt.png", "a_pred.png", "b_gt.png", "b_pred.png"] {
            std::fs::write(dir.join(name), b"x").unwrap();
        }
        DatasetManifest {
            num_classes: 2,
            class_names: vec!["bg".into(), "fg".into()],
            mode: SegmentationMode::MultiClass,
            null_semantics: NullSemantics::Ours,
            ignore_id: Some(255),
            thing_classes: None,
            instance_encoding: InstanceEncoding::Sidecar,
            entries: vec![
                ManifestEntry {
                    id: "a".into(),
                    gt: "a_gt.png".into(),
                    pred: Some("a_pred.png".into()),
                    instances: None,
                },
                ManifestEntry {
                    id: "b".into(),
                    gt: "b_gt.png".into(),
                    pred: Some("b_pred.png".into()),
                    instances: None,
                },
            ],
        }
    }

    #[test]
    fn well_formed_manifest_has_no_findings() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path());
        assert!(m.validate(dir.path(), true).is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(dir.path());
        m.entries[1].id = "a".into();
        let findings = m.validate(dir.path(), true);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].entry.as_deref(), Some("a"));
        assert_eq!(findings[0].rule, "unique_id");
    }

    #[test]
    fn binary_foreground_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(dir.path());
        m.mode = SegmentationMode::Binary { foreground: 7 };
        let findings = m.validate(dir.path(), true);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].rule, "binary");
    }

    #[test]
    fn missing_file_and_missing_prediction() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(dir.path());
        m.entries[0].gt = "nope.png".into();
        m.entries[1].pred = None;
        let findings = m.validate(dir.path(), true);
        assert_eq!(findings.len(), 2);
        assert!(m.validate(dir.path(), false).len() == 1);
    }

    #[test]
    fn parse_error_carries_position() {
        let err = DatasetManifest::from_json("{\n  \"num_classes\": 2,\n  oops\n}").unwrap_err();
        match err {
            Error::ManifestParse { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn external_json_shape() {
        let text = r#"{
            "num_classes": 3,
            "class_names": ["a", "b", "c"],
            "mode": {"binary": {"foreground": 1}},
            "null_semantics": "csurka",
            "instance_encoding": {"panoptic": {"divisor": 1000}},
            "entries": [{"id": "x", "gt": "g.png", "pred": "p.png", "instances": "i.png"}]
        }"#;
        let m = DatasetManifest::from_json(text).unwrap();
        assert_eq!(m.mode, SegmentationMode::Binary { foreground: 1 });
        assert_eq!(m.null_semantics, NullSemantics::Csurka);
        assert_eq!(m.ignore_id, Some(255));
        assert_eq!(m.instance_encoding, InstanceEncoding::Panoptic { divisor: 1000 });
        assert_eq!(m.class_role(1), ClassRole::BinaryForeground);
        assert_eq!(m.class_role(0), ClassRole::BinaryBackground);

        let plain = r#"{"num_classes": 1, "class_names": ["a"], "mode": "multiclass",
                        "entries": []}"#;
        let m = DatasetManifest::from_json(plain).unwrap();
        assert_eq!(m.mode, SegmentationMode::MultiClass);
        assert_eq!(m.null_semantics, NullSemantics::Ours);
    }

    #[test]
    fn label_map_rejects_bad_shapes() {
        assert!(LabelMap::new(0, 2, vec![], None).is_err());
        assert!(LabelMap::new(2, 2, vec![0; 3], None).is_err());
        let m = LabelMap::new(2, 1, vec![0, 9], Some(255)).unwrap();
        match m.validate(3, "gt").unwrap_err() {
            Error::LabelOutOfRange { x, y, label, .. } => assert_eq!((x, y, label), (1, 0, 9)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn instance_map_requires_class_entries() {
        let err = InstanceMap::new(2, 1, vec![7, 0], BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::UnknownInstance { id: 7 }));
    }

    #[test]
    fn null_is_never_averaged() {
        let s = [Score::Value(0.5), Score::Null, Score::Value(1.0)];
        assert_eq!(mean_non_null(s), Some(0.75));
        assert_eq!(mean_non_null([Score::Null]), None);
    }

    #[test]
    fn score_matrix_columns() {
        let m = ScoreMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec![
                vec![Score::Value(1.0), Score::Null],
                vec![Score::Value(0.0), Score::Value(0.5)],
            ],
        )
        .unwrap();
        let col: Vec<_> = m.column(1).collect();
        assert_eq!(col, vec![Score::Null, Score::Value(0.5)]);
        assert_eq!(m.row(1), &[Score::Value(0.0), Score::Value(0.5)]);
    }
}
