//! Activation maps: the saliency grids every other module consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pixel location on an `H x W` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
}

impl PixelIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn from_flat(index: usize, width: usize) -> Self {
        Self {
            row: index / width,
            col: index % width,
        }
    }

    pub fn flat(&self, width: usize) -> usize {
        self.row * width + self.col
    }
}

/// A row-major `H x W` grid of activations.
///
/// Construction only checks the shape. Non-finite values are allowed so that
/// broken component outputs can be loaded and then rejected by [`is_valid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    label: String,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "map dimensions must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            label: String::new(),
        })
    }

    /// Builds a map from nested rows. Handy in tests and small fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidShape("ragged rows".into()));
        }
        Self::new(height, width, rows.concat())
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn get(&self, pixel: PixelIndex) -> f64 {
        self.values[pixel.flat(self.width)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn same_shape(&self, other: &ActivationMap) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Min-max rescales a map to `[0, 1]`. A constant map becomes all-zero.
pub fn normalize(map: &ActivationMap) -> Result<ActivationMap> {
    if !map.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let (lo, hi) = map
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let values = if span > 0.0 {
        map.values.iter().map(|&v| (v - lo) / span).collect()
    } else {
        vec![0.0; map.values.len()]
    };
    Ok(ActivationMap {
        height: map.height,
        width: map.width,
        values,
        label: map.label.clone(),
    })
}

/// A map is usable when every value is finite and at least one is non-zero.
pub fn is_valid(map: &ActivationMap) -> bool {
    map.is_finite() && map.values.iter().any(|&v| v != 0.0)
}

/// Splits maps into valid ones and the labels of those that were dropped.
pub fn filter_valid<I>(maps: I) -> (Vec<ActivationMap>, Vec<String>)
where
    I: IntoIterator<Item = ActivationMap>,
{
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for map in maps {
        if is_valid(&map) {
            kept.push(map);
        } else {
            dropped.push(map.label.clone());
        }
    }
    (kept, dropped)
}
