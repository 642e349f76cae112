use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel statistics used when the tensor was standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// The ImageNet statistics used by torchvision classifiers.
    pub fn imagenet() -> Self {
        Self {
            mean: vec![0.485, 0.456, 0.406],
            std: vec![0.229, 0.224, 0.225],
        }
    }
}

/// A planar `C x H x W` float image, usually already standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    normalization: Option<Normalization>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::InvalidShape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
            normalization: None,
        })
    }

    /// Builds an image by evaluating `f(channel, row, col)` at every sample.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    values.push(f(c, r, col));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Result<Self> {
        if normalization.mean.len() != self.channels || normalization.std.len() != self.channels {
            return Err(Error::InvalidShape(format!(
                "normalization record must have {} entries per field",
                self.channels
            )));
        }
        self.normalization = Some(normalization);
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// One channel plane, row-major.
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.pixel_count();
        &self.values[channel * n..(channel + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, channel: usize) -> &mut [f32] {
        let n = self.pixel_count();
        &mut self.values[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.values[(channel * self.height + row) * self.width + col]
    }

    /// Undo standardization, giving values in roughly `[0, 1]` per channel.
    pub fn denormalized(&self) -> Vec<f32> {
        match &self.normalization {
            None => self.values.clone(),
            Some(norm) => {
                let n = self.pixel_count();
                self.values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let c = i / n;
                        (v as f64 * norm.std[c] + norm.mean[c]) as f32
                    })
                    .collect()
            }
        }
    }
}
