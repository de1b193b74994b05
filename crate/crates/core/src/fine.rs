//! Per-image-per-class scores with NULL semantics, and the image-first
//! (mIoU^I) and class-first (mIoU^C) means built on them.

use serde::Serialize;

use crate::confusion::DatasetConfusion;
use crate::error::{Error, Result};
use crate::types::{mean_non_null, ClassRole, ConfusionCell, DatasetManifest, NullSemantics, Score, ScoreMatrix};

/// Scores one (image, class) cell.
///
/// | case | gt | pred | multi-class | binary foreground |
/// |------|----|------|-------------|-------------------|
/// | 1    | ✓  | ✓    | IoU         | IoU               |
/// | 2    | ✗  | ✗    | NULL        | 1                 |
/// | 3    | ✓  | ✗    | 0           | 0                 |
/// | 4    | ✗  | ✓    | NULL (Csurka: 0) | 0            |
///
/// Binary background classes follow the multi-class column.
pub fn score_cell(cell: ConfusionCell, role: ClassRole, semantics: NullSemantics) -> Score {
    let in_gt = cell.gt_pixels() > 0;
    let in_pred = cell.pred_pixels() > 0;
    let foreground = role == ClassRole::BinaryForeground;
    match (in_gt, in_pred) {
        (true, _) => Score::value(cell.tp as f64 / cell.union() as f64),
        (false, false) if foreground => Score::Value(1.0),
        (false, false) => Score::Null,
        (false, true) if foreground => Score::Value(0.0),
        (false, true) => match semantics {
            NullSemantics::Ours => Score::Null,
            NullSemantics::Csurka => Score::Value(0.0),
        },
    }
}

pub fn build_score_matrix(dc: &DatasetConfusion, manifest: &DatasetManifest) -> Result<ScoreMatrix> {
    build_score_matrix_with(
        dc,
        |c| manifest.class_role(c),
        manifest.null_semantics,
        manifest.num_classes,
    )
}

/// Same as [`build_score_matrix`] with the class role and semantics given directly.
pub fn build_score_matrix_with(
    dc: &DatasetConfusion,
    role_of: impl Fn(usize) -> ClassRole,
    semantics: NullSemantics,
    num_classes: usize,
) -> Result<ScoreMatrix> {
    if dc.num_classes() != num_classes {
        return Err(Error::ClassCountMismatch {
            expected: num_classes,
            found: dc.num_classes(),
        });
    }
    let roles: Vec<ClassRole> = (0..num_classes).map(role_of).collect();
    let mut ids = Vec::with_capacity(dc.per_image.len());
    let mut entries = Vec::with_capacity(dc.per_image.len() * num_classes);
    for image in &dc.per_image {
        ids.push(image.image_id.clone());
        entries.extend(
            image
                .cells
                .iter()
                .zip(&roles)
                .map(|(&cell, &role)| score_cell(cell, role, semantics)),
        );
    }
    ScoreMatrix::new(ids, num_classes, entries)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineMetricReport {
    #[serde(skip)]
    pub score_matrix: ScoreMatrix,
    /// IoU_i^I per image, NULL for all-NULL rows.
    pub iou_i_per_image: Vec<Score>,
    pub miou_i: f64,
    /// IoU_c^C per class, NULL for all-NULL columns.
    pub iou_c_per_class: Vec<Score>,
    pub miou_c: f64,
    /// I_c: images in which class c has a non-NULL score.
    pub image_class_counts: Vec<usize>,
}

impl FineMetricReport {
    pub fn image_ids(&self) -> &[String] {
        self.score_matrix.image_ids()
    }

    /// Non-NULL scores of class `c` in image order.
    pub fn class_scores(&self, c: usize) -> Vec<f64> {
        self.score_matrix.column(c).filter_map(Score::as_option).collect()
    }
}

pub fn compute_fine_metrics(sm: &ScoreMatrix) -> Result<FineMetricReport> {
    if sm.entries().iter().all(|s| s.is_null()) {
        return Err(Error::NoScorableContent);
    }
    let iou_i_per_image: Vec<Score> = (0..sm.num_images())
        .map(|i| Score::from_option(mean_non_null(sm.row(i).iter().copied())))
        .collect();
    for (id, s) in sm.image_ids().iter().zip(&iou_i_per_image) {
        if s.is_null() {
            log::warn!("image {id} has no scorable class and is excluded from mIoU^I");
        }
    }
    let iou_c_per_class: Vec<Score> = (0..sm.num_classes())
        .map(|c| Score::from_option(mean_non_null(sm.column(c))))
        .collect();
    let image_class_counts = (0..sm.num_classes())
        .map(|c| sm.column(c).filter(|s| !s.is_null()).count())
        .collect();

    Ok(FineMetricReport {
        score_matrix: sm.clone(),
        miou_i: mean_non_null(iou_i_per_image.iter().copied()).expect("at least one scored row"),
        miou_c: mean_non_null(iou_c_per_class.iter().copied()).expect("at least one scored column"),
        iou_i_per_image,
        iou_c_per_class,
        image_class_counts,
    })
}
