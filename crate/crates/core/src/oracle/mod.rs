//! Model oracles: anything that maps an image to class probabilities.

#[cfg(feature = "onnx")]
mod onnx;

#[cfg(feature = "onnx")]
pub use onnx::{write_linear_classifier, OnnxOracle};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// A deterministic classifier. `predict` returns post-softmax probabilities.
///
/// Oracles are queried concurrently, so implementations must be `Sync`.
pub trait ModelOracle: Send + Sync {
    fn class_count(&self) -> usize;

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>>;

    /// Probability of a single class.
    fn confidence(&self, image: &ImageTensor, class_id: usize) -> Result<f64> {
        check_class(class_id, self.class_count())?;
        let probs = self.predict(image)?;
        probs.get(class_id).copied().ok_or_else(|| {
            Error::Oracle(format!("oracle returned {} classes", probs.len()))
        })
    }
}

pub fn check_class(class_id: usize, class_count: usize) -> Result<()> {
    if class_id >= class_count {
        return Err(Error::ClassOutOfRange {
            class_id,
            class_count,
        });
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Ignores the image and always returns the same distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantOracle {
    pub probabilities: Vec<f64>,
}

impl ConstantOracle {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        let total: f64 = probabilities.iter().sum();
        if probabilities.is_empty()
            || probabilities.iter().any(|p| !(0.0..=1.0).contains(p))
            || (total - 1.0).abs() > 1e-5
        {
            return Err(Error::Oracle("constant oracle needs a probability vector".into()));
        }
        Ok(Self { probabilities })
    }
}

impl ModelOracle for ConstantOracle {
    fn class_count(&self) -> usize {
        self.probabilities.len()
    }

    fn predict(&self, _image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.probabilities.clone())
    }
}

/// Two-class oracle whose class-0 probability is
/// `sigmoid(gain * (mean over region and channels) + bias)`.
///
/// Only pixels inside the half-open `rows x cols` rectangle influence it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOracle {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    pub gain: f64,
    pub bias: f64,
}

impl RegionOracle {
    pub fn region_mean(&self, image: &ImageTensor) -> Result<f64> {
        let [r0, r1] = self.rows;
        let [c0, c1] = self.cols;
        if r0 >= r1 || c0 >= c1 || r1 > image.height() || c1 > image.width() {
            return Err(Error::Oracle(format!(
                "region rows {r0}..{r1}, cols {c0}..{c1} does not fit a {}x{} image",
                image.height(),
                image.width()
            )));
        }
        let mut sum = 0.0;
        for ch in 0..image.channels() {
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += f64::from(image.get(ch, r, c));
                }
            }
        }
        Ok(sum / (image.channels() * (r1 - r0) * (c1 - c0)) as f64)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.rows[0]..self.rows[1]).contains(&row) && (self.cols[0]..self.cols[1]).contains(&col)
    }
}

impl ModelOracle for RegionOracle {
    fn class_count(&self) -> usize {
        2
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let z = self.gain * self.region_mean(image)? + self.bias;
        Ok(softmax(&[z, 0.0]))
    }
}

/// Softmax of an affine function of the flattened image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOracle {
    /// One row of `C * H * W` weights per class.
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
}

impl LinearOracle {
    pub fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        if self.weights.len() != self.bias.len() || self.weights.is_empty() {
            return Err(Error::Oracle("weights and bias disagree on class count".into()));
        }
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, &b)| {
                if row.len() != image.values().len() {
                    return Err(Error::Oracle(format!(
                        "weight row has {} entries, image has {}",
                        row.len(),
                        image.values().len()
                    )));
                }
                let dot: f64 = row
                    .iter()
                    .zip(image.values())
                    .map(|(&w, &x)| f64::from(w) * f64::from(x))
                    .sum();
                Ok(dot + f64::from(b))
            })
            .collect()
    }

    /// The two-class linear equivalent of a [`RegionOracle`].
    pub fn from_region(region: &RegionOracle, channels: usize, height: usize, width: usize) -> Self {
        let area = ((region.rows[1] - region.rows[0]) * (region.cols[1] - region.cols[0]) * channels) as f64;
        let mut row = vec![0.0f32; channels * height * width];
        for ch in 0..channels {
            for r in region.rows[0]..region.rows[1] {
                for c in region.cols[0]..region.cols[1] {
                    row[(ch * height + r) * width + c] = (region.gain / area) as f32;
                }
            }
        }
        Self {
            weights: vec![row, vec![0.0; channels * height * width]],
            bias: vec![region.bias as f32, 0.0],
        }
    }
}

impl ModelOracle for LinearOracle {
    fn class_count(&self) -> usize {
        self.bias.len()
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(image)?))
    }
}

impl<T: ModelOracle + ?Sized> ModelOracle for Box<T> {
    fn class_count(&self) -> usize {
        (**self).class_count()
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        (**self).predict(image)
    }
}

impl<T: ModelOracle + ?Sized> ModelOracle for std::sync::Arc<T> {
    fn class_count(&self) -> usize {
        (**self).class_count()
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        (**self).predict(image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn region_oracle_only_sees_region() {
        let oracle = RegionOracle {
            rows: [1, 3],
            cols: [1, 3],
            gain: 4.0,
            bias: -2.0,
        };
        let a = ImageTensor::from_fn(3, 4, 4, |_, r, c| if oracle.contains(r, c) { 1.0 } else { 0.0 }).unwrap();
        let b = ImageTensor::from_fn(3, 4, 4, |_, r, c| if oracle.contains(r, c) { 1.0 } else { -7.0 }).unwrap();
        let pa = oracle.predict(&a).unwrap();
        assert_eq!(pa, oracle.predict(&b).unwrap());
        assert!((pa[0] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-12);
        assert!((pa[0] + pa[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_equivalent_of_region() {
        let region = RegionOracle {
            rows: [0, 2],
            cols: [1, 3],
            gain: 6.0,
            bias: -1.0,
        };
        let linear = LinearOracle::from_region(&region, 3, 4, 5);
        let img = ImageTensor::from_fn(3, 4, 5, |c, r, col| ((c * 7 + r * 3 + col) % 5) as f32 * 0.2).unwrap();
        let a = region.predict(&img).unwrap();
        let b = linear.predict(&img).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-6);
    }

    #[test]
    fn class_range_checked() {
        let oracle = ConstantOracle::new(vec![0.25, 0.75]).unwrap();
        let img = ImageTensor::new(1, 1, 1, vec![0.0]).unwrap();
        assert_eq!(oracle.confidence(&img, 1).unwrap(), 0.75);
        assert!(matches!(
            oracle.confidence(&img, 2),
            Err(Error::ClassOutOfRange { class_id: 2, class_count: 2 })
        ));
        assert!(ConstantOracle::new(vec![0.5, 0.6]).is_err());
    }
}
