//! Jaccard metric loss: `1 - (‖x+y‖₁ - ‖x-y‖₁) / (‖x+y‖₁ + ‖x-y‖₁)` on
//! `[0, 1]^p`, its gradient, and dataset/image/class aggregations.

pub mod check;

use crate::error::{Error, Result};

/// A vector with every component in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftVector(Vec<f64>);

impl SoftVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfUnitInterval { index, value });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for SoftVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

/// `(‖x+y‖₁, ‖x−y‖₁)`.
fn norms(x: &[f64], y: &[f64]) -> (f64, f64) {
    x.iter().zip(y).fold((0.0, 0.0), |(a, b), (&xi, &yi)| {
        (a + (xi + yi).abs(), b + (xi - yi).abs())
    })
}

fn loss_from_norms(sum: f64, diff: f64) -> f64 {
    if sum + diff == 0.0 {
        0.0
    } else {
        1.0 - (sum - diff) / (sum + diff)
    }
}

fn same_len(x: &SoftVector, y: &SoftVector) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

/// Loss value; 0 when both vectors are all-zero.
pub fn jml_forward(x: &SoftVector, y: &SoftVector) -> Result<f64> {
    same_len(x, y)?;
    let (a, b) = norms(x.values(), y.values());
    Ok(loss_from_norms(a, b))
}

/// Partial derivatives with respect to `x`.
///
/// With `A = ‖x+y‖₁` and `B = ‖x−y‖₁` the loss is `2B / (A+B)`, so
/// `∂/∂x_i = 2(sign(x_i − y_i)·A − B) / (A+B)²`. `sign(0) = 0` at kinks;
/// the all-zero pair returns a zero gradient.
pub fn jml_gradient(x: &SoftVector, y: &SoftVector) -> Result<Vec<f64>> {
    same_len(x, y)?;
    let (a, b) = norms(x.values(), y.values());
    let s = a + b;
    if s == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let scale = 2.0 / (s * s);
    Ok(x.values()
        .iter()
        .zip(y.values())
        .map(|(&xi, &yi)| {
            let sign = if xi > yi {
                1.0
            } else if xi < yi {
                -1.0
            } else {
                0.0
            };
            scale * (sign * a - b)
        })
        .collect())
}

/// Weights of the dataset-, image- and class-level terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JmlAggregation {
    w_d: f64,
    w_i: f64,
    w_c: f64,
}

impl JmlAggregation {
    pub fn new(w_d: f64, w_i: f64, w_c: f64) -> Result<Self> {
        if [w_d, w_i, w_c].iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "aggregation weights must be non-negative".into(),
            ));
        }
        if (w_d + w_i + w_c - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "aggregation weights sum to {}, expected 1",
                w_d + w_i + w_c
            )));
        }
        Ok(Self { w_d, w_i, w_c })
    }

    pub fn dataset() -> Self {
        Self {
            w_d: 1.0,
            w_i: 0.0,
            w_c: 0.0,
        }
    }

    pub fn image() -> Self {
        Self {
            w_d: 0.0,
            w_i: 1.0,
            w_c: 0.0,
        }
    }

    pub fn class() -> Self {
        Self {
            w_d: 0.0,
            w_i: 0.0,
            w_c: 1.0,
        }
    }

    pub fn weights(&self) -> (f64, f64, f64) {
        (self.w_d, self.w_i, self.w_c)
    }
}

/// Soft prediction and label of every class in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftImage {
    pub pred: Vec<SoftVector>,
    pub label: Vec<SoftVector>,
}

/// The three aggregation terms of [`jml_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JmlTerms {
    pub dataset: f64,
    pub image: f64,
    pub class: f64,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Computes the dataset, image and class terms.
///
/// * dataset: per class, the loss over that class's pixels concatenated
///   across all images, averaged over classes with any mass;
/// * image: per image, the mean loss over classes present in the label,
///   averaged over images with at least one present class;
/// * class: per class, the mean loss over images where it is present,
///   averaged over classes present somewhere.
///
/// A class is present in an image when its label vector has positive mass.
pub fn jml_terms(images: &[SoftImage]) -> Result<JmlTerms> {
    let first = images.first().ok_or(Error::EmptyInput("jml images"))?;
    let num_classes = first.pred.len();
    if num_classes == 0 {
        return Err(Error::EmptyInput("jml classes"));
    }

    let mut class_norms = vec![(0.0f64, 0.0f64); num_classes];
    let mut class_sums = vec![(0.0f64, 0usize); num_classes];
    let mut image_sum = 0.0;
    let mut scored_images = 0usize;

    for img in images {
        for found in [img.pred.len(), img.label.len()] {
            if found != num_classes {
                return Err(Error::ClassCountMismatch {
                    expected: num_classes,
                    found,
                });
            }
        }
        let mut row_sum = 0.0;
        let mut row_n = 0usize;
        for (c, (x, y)) in img.pred.iter().zip(&img.label).enumerate() {
            same_len(x, y)?;
            let (a, b) = norms(x.values(), y.values());
            class_norms[c].0 += a;
            class_norms[c].1 += b;
            if y.mass() > 0.0 {
                let loss = loss_from_norms(a, b);
                row_sum += loss;
                row_n += 1;
                class_sums[c].0 += loss;
                class_sums[c].1 += 1;
            }
        }
        if row_n > 0 {
            image_sum += row_sum / row_n as f64;
            scored_images += 1;
        }
    }

    let (d_sum, d_n) = class_norms
        .iter()
        .filter(|(a, _)| *a > 0.0)
        .fold((0.0, 0usize), |(s, n), &(a, b)| (s + loss_from_norms(a, b), n + 1));
    let (c_sum, c_n) = class_sums
        .iter()
        .filter(|(_, n)| *n > 0)
        .fold((0.0, 0usize), |(s, k), &(sum, n)| (s + sum / n as f64, k + 1));

    Ok(JmlTerms {
        dataset: mean(d_sum, d_n),
        image: mean(image_sum, scored_images),
        class: mean(c_sum, c_n),
    })
}

/// `w_d·D + w_i·I + w_c·C`.
pub fn jml_dataset(images: &[SoftImage], agg: JmlAggregation) -> Result<f64> {
    let t = jml_terms(images)?;
    Ok(agg.w_d * t.dataset + agg.w_i * t.image + agg.w_c * t.class)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> SoftVector {
        SoftVector::new(v.to_vec()).unwrap()
    }

    /// Dot-product soft Jaccard loss `1 - <x,y> / (|x| + |y| - <x,y>)`.
    fn soft_jaccard(x: &[f64], y: &[f64]) -> f64 {
        let i: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let u: f64 = x.iter().sum::<f64>() + y.iter().sum::<f64>() - i;
        1.0 - i / u
    }

    #[test]
    fn forward_examples() {
        let x = sv(&[0.2, 0.7, 1.0]);
        assert_eq!(jml_forward(&x, &x).unwrap(), 0.0);
        assert_eq!(jml_forward(&sv(&[1.0, 0.0]), &sv(&[0.0, 1.0])).unwrap(), 1.0);
        let v = jml_forward(&sv(&[0.5, 0.5]), &sv(&[1.0, 0.0])).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert!((v - soft_jaccard(&[0.5, 0.5], &[1.0, 0.0])).abs() < 1e-15);
        assert_eq!(jml_forward(&sv(&[0.0, 0.0]), &sv(&[0.0, 0.0])).unwrap(), 0.0);
        assert!(jml_forward(&sv(&[0.0]), &sv(&[0.0, 1.0])).is_err());
        assert!(SoftVector::new(vec![1.5]).is_err());
    }

    #[test]
    fn gradient_single_coordinate() {
        // A = 1.3, B = 0.7: d/dx = 2(-1.3 - 0.7)/4 = -1
        let g = jml_gradient(&sv(&[0.3]), &sv(&[1.0])).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-15);
        let h = 1e-6;
        let fd = (jml_forward(&sv(&[0.3 + h]), &sv(&[1.0])).unwrap()
            - jml_forward(&sv(&[0.3 - h]), &sv(&[1.0])).unwrap())
            / (2.0 * h);
        assert!((g[0] - fd).abs() <= 1e-6);
    }

    #[test]
    fn gradient_matches_soft_jaccard_for_binary_labels() {
        let x = [0.2, 0.9, 0.4, 0.6];
        let y = [1.0, 0.0, 1.0, 0.0];
        let g = jml_gradient(&sv(&x), &sv(&y)).unwrap();
        let i: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let u: f64 = x.iter().sum::<f64>() + y.iter().sum::<f64>() - i;
        for k in 0..x.len() {
            let expected = -(y[k] * u - i * (1.0 - y[k])) / (u * u);
            assert!((g[k] - expected).abs() < 1e-14, "coordinate {k}");
        }
    }

    #[test]
    fn kinks_and_zero_pair() {
        let g = jml_gradient(&sv(&[0.5, 0.2]), &sv(&[0.5, 0.9])).unwrap();
        // coordinate 0 sits on the kink: sign 0 leaves only the -B term
        let (a, b) = (2.1, 0.7);
        assert!((g[0] - 2.0 * (-b) / ((a + b) * (a + b))).abs() < 1e-15);
        // one-sided differences bracket the subgradient
        let h = 1e-6;
        let f = |v: f64| jml_forward(&sv(&[v, 0.2]), &sv(&[0.5, 0.9])).unwrap();
        let right = (f(0.5 + h) - f(0.5)) / h;
        let left = (f(0.5) - f(0.5 - h)) / h;
        assert!(left - 1e-6 <= g[0] && g[0] <= right + 1e-6);
        assert_eq!(jml_gradient(&sv(&[0.0]), &sv(&[0.0])).unwrap(), vec![0.0]);
    }

    fn image(pairs: &[(&[f64], &[f64])]) -> SoftImage {
        SoftImage {
            pred: pairs.iter().map(|p| sv(p.0)).collect(),
            label: pairs.iter().map(|p| sv(p.1)).collect(),
        }
    }

    #[test]
    fn dataset_single_image_collapse() {
        let img = image(&[
            (&[0.9, 0.1, 0.3], &[1.0, 0.0, 0.0]),
            (&[0.1, 0.9, 0.7], &[0.0, 1.0, 1.0]),
        ]);
        let d = jml_dataset(std::slice::from_ref(&img), JmlAggregation::dataset()).unwrap();
        let plain = (jml_forward(&img.pred[0], &img.label[0]).unwrap()
            + jml_forward(&img.pred[1], &img.label[1]).unwrap())
            / 2.0;
        assert!((d - plain).abs() < 1e-15);
    }

    #[test]
    fn image_and_class_agree_on_balanced_data() {
        let a = image(&[(&[0.9, 0.2], &[1.0, 0.0]), (&[0.1, 0.8], &[0.0, 1.0])]);
        let b = image(&[(&[0.6, 0.6], &[1.0, 1.0]), (&[0.3, 0.1], &[1.0, 0.0])]);
        let imgs = [a, b];
        let i = jml_dataset(&imgs, JmlAggregation::image()).unwrap();
        let c = jml_dataset(&imgs, JmlAggregation::class()).unwrap();
        // brute force: all four cells present, grand mean either way
        let mut cells = Vec::new();
        for img in &imgs {
            for k in 0..2 {
                cells.push(jml_forward(&img.pred[k], &img.label[k]).unwrap());
            }
        }
        let grand = cells.iter().sum::<f64>() / 4.0;
        assert!((i - grand).abs() < 1e-15 && (c - grand).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let img = image(&[(&[1.0, 0.0], &[1.0, 0.0]), (&[0.0, 1.0], &[0.0, 1.0])]);
        for agg in [
            JmlAggregation::dataset(),
            JmlAggregation::image(),
            JmlAggregation::class(),
            JmlAggregation::new(0.2, 0.3, 0.5).unwrap(),
        ] {
            assert_eq!(jml_dataset(std::slice::from_ref(&img), agg).unwrap(), 0.0);
        }
        assert!(jml_dataset(&[], JmlAggregation::dataset()).is_err());
        assert!(JmlAggregation::new(0.5, 0.5, 0.5).is_err());
        assert!(JmlAggregation::new(-0.5, 1.0, 0.5).is_err());
    }

    #[test]
    fn absent_classes_are_skipped() {
        // class 1 absent from the label in image 0
        let a = image(&[(&[0.5, 0.5], &[1.0, 1.0]), (&[0.4, 0.0], &[0.0, 0.0])]);
        let b = image(&[(&[1.0, 0.0], &[1.0, 0.0]), (&[0.0, 1.0], &[0.0, 1.0])]);
        let t = jml_terms(&[a.clone(), b]).unwrap();
        let a0 = jml_forward(&a.pred[0], &a.label[0]).unwrap();
        assert!((t.image - a0 / 2.0).abs() < 1e-15);
        assert!((t.class - (a0 / 2.0 + 0.0) / 2.0).abs() < 1e-15);
    }
}
