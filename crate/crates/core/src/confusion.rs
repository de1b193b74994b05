//! Per-image-per-class TP/FP/FN counting and dataset accumulation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{require_same_shape, ConfusionCell, LabelMap};

/// Confusion cells of one image, indexed by class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImageConfusion {
    pub image_id: String,
    pub cells: Vec<ConfusionCell>,
}

impl ImageConfusion {
    pub fn num_classes(&self) -> usize {
        self.cells.len()
    }

    /// Non-ignore ground-truth pixels (Σ tp + fn).
    pub fn gt_pixels(&self) -> u64 {
        self.cells.iter().map(ConfusionCell::gt_pixels).sum()
    }

    /// Classes with at least one ground-truth pixel.
    pub fn gt_classes(&self) -> usize {
        self.cells.iter().filter(|c| c.gt_pixels() > 0).count()
    }
}

/// Per-image confusion plus running class totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetConfusion {
    pub per_image: Vec<ImageConfusion>,
    pub totals: Vec<ConfusionCell>,
}

impl DatasetConfusion {
    pub fn new(num_classes: usize) -> Self {
        Self {
            per_image: Vec::new(),
            totals: vec![ConfusionCell::default(); num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.totals.len()
    }

    /// Folds in one more image.
    pub fn push(&mut self, image: ImageConfusion) -> Result<()> {
        if image.num_classes() != self.num_classes() {
            return Err(Error::ClassCountMismatch {
                expected: self.num_classes(),
                found: image.num_classes(),
            });
        }
        for (total, cell) in self.totals.iter_mut().zip(&image.cells) {
            *total += *cell;
        }
        self.per_image.push(image);
        Ok(())
    }
}

/// Counts TP/FP/FN for every class of one image.
///
/// Ground-truth pixels carrying the ignore id are dropped entirely. A
/// prediction equal to the ignore id counts as "no class": it is a false
/// negative for the ground-truth class and a false positive for nothing.
pub fn confuse_image(image_id: &str, gt: &LabelMap, pred: &LabelMap, num_classes: usize) -> Result<ImageConfusion> {
    require_same_shape("gt", (gt.width(), gt.height()), "pred", (pred.width(), pred.height()))?;
    let ignore = gt.ignore_id();
    let pred_ignore = pred.ignore_id();
    let mut cells = vec![ConfusionCell::default(); num_classes];

    for (idx, (&g, &p)) in gt.labels().iter().zip(pred.labels()).enumerate() {
        if Some(g) == ignore {
            continue;
        }
        if g as usize >= num_classes {
            return Err(gt.out_of_range("gt", idx, num_classes));
        }
        let p_void = Some(p) == pred_ignore;
        if !p_void && p as usize >= num_classes {
            return Err(pred.out_of_range("pred", idx, num_classes));
        }
        if g == p {
            cells[g as usize].tp += 1;
        } else {
            cells[g as usize].fn_ += 1;
            if !p_void {
                cells[p as usize].fp += 1;
            }
        }
    }

    Ok(ImageConfusion {
        image_id: image_id.to_string(),
        cells,
    })
}

/// Accumulates images in input order into dataset totals.
pub fn accumulate<I>(images: I, num_classes: usize) -> Result<DatasetConfusion>
where
    I: IntoIterator<Item = ImageConfusion>,
{
    let mut dc = DatasetConfusion::new(num_classes);
    for image in images {
        dc.push(image)?;
    }
    Ok(dc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(labels: &[u32], w: u32) -> LabelMap {
        LabelMap::new(w, labels.len() as u32 / w, labels.to_vec(), Some(255)).unwrap()
    }

    fn cells(v: &[(u64, u64, u64)]) -> Vec<ConfusionCell> {
        v.iter().map(|&(tp, fp, fn_)| ConfusionCell::new(tp, fp, fn_)).collect()
    }

    #[test]
    fn identity() {
        let m = map(&[0, 1, 1, 0], 2);
        let ic = confuse_image("a", &m, &m, 2).unwrap();
        assert_eq!(ic.cells, cells(&[(2, 0, 0), (2, 0, 0)]));
    }

    #[test]
    fn four_pixel_example() {
        let gt = map(&[0, 0, 1, 1], 4);
        let pred = map(&[0, 2, 1, 3], 4);
        let ic = confuse_image("a", &gt, &pred, 6).unwrap();
        assert_eq!(
            ic.cells,
            cells(&[(1, 0, 1), (1, 0, 1), (0, 1, 0), (0, 1, 0), (0, 0, 0), (0, 0, 0)])
        );
    }

    #[test]
    fn ignore_pixels_are_dropped() {
        let gt = map(&[0, 255, 1], 3);
        let pred = map(&[1, 0, 1], 3);
        let ic = confuse_image("a", &gt, &pred, 2).unwrap();
        assert_eq!(ic.cells, cells(&[(0, 0, 1), (1, 1, 0)]));
    }

    #[test]
    fn void_prediction_is_only_a_miss() {
        let gt = map(&[0, 1], 2);
        let pred = map(&[255, 1], 2);
        let ic = confuse_image("a", &gt, &pred, 2).unwrap();
        assert_eq!(ic.cells, cells(&[(0, 0, 1), (1, 0, 0)]));
    }

    #[test]
    fn errors_name_shapes_and_pixels() {
        let a = map(&[0, 1], 2);
        let b = map(&[0, 1], 1);
        let e = confuse_image("a", &a, &b, 2).unwrap_err().to_string();
        assert!(e.contains("2x1") && e.contains("1x2"), "{e}");

        let pred = map(&[0, 0, 0, 5], 2);
        let gt = map(&[0, 0, 0, 0], 2);
        match confuse_image("a", &gt, &pred, 2).unwrap_err() {
            Error::LabelOutOfRange { map, x, y, .. } => assert_eq!((map, x, y), ("pred", 1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn accumulate_cases() {
        let empty = accumulate(Vec::new(), 3).unwrap();
        assert!(empty.per_image.is_empty());
        assert_eq!(empty.totals, vec![ConfusionCell::default(); 3]);

        let gt = map(&[0, 0, 1, 1], 4);
        let pred = map(&[0, 2, 1, 3], 4);
        let ic = confuse_image("a", &gt, &pred, 6).unwrap();
        let single = accumulate(vec![ic.clone()], 6).unwrap();
        assert_eq!(single.totals, ic.cells);

        let double = accumulate(vec![ic.clone(), ic.clone()], 6).unwrap();
        // independent summation
        let mut expected = vec![(0u64, 0u64, 0u64); 6];
        for c in [&ic.cells, &ic.cells] {
            for (e, cell) in expected.iter_mut().zip(c.iter()) {
                e.0 += cell.tp;
                e.1 += cell.fp;
                e.2 += cell.fn_;
            }
        }
        assert_eq!(double.totals, cells(&expected));
        assert_eq!(double.per_image.len(), 2);

        let other = ImageConfusion {
            image_id: "z".into(),
            cells: vec![ConfusionCell::default(); 2],
        };
        assert!(matches!(
            accumulate(vec![ic, other], 6),
            Err(Error::ClassCountMismatch { expected: 6, found: 2 })
        ));
    }
}
