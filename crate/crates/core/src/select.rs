//! Deterministic top-k pixel selection.
//!
//! Every selection in the engine derives from one total order over pixels:
//! higher value first, ties broken by ascending row-major index. Most-relevant
//! selections take a prefix of that order and least-relevant selections take a
//! suffix, so the two mirror each other exactly.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::map::{ActivationMap, PixelIndex};

/// Number of pixels retained at `k_percent` of `total`: `ceil(k/100 * total)`.
pub fn retained_count(k_percent: f64, total: usize) -> Result<usize> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidK(k_percent));
    }
    Ok(percent_count(k_percent, total))
}

// k * n is exact for integral k, so divide last.
pub(crate) fn percent_count(percent: f64, total: usize) -> usize {
    let raw = (percent * total as f64 / 100.0).ceil() as usize;
    raw.clamp(1, total)
}

fn rank_cmp(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b]
        .partial_cmp(&values[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Flat indices of every pixel, most activated first.
pub fn ranking(map: &ActivationMap) -> Result<Vec<usize>> {
    if !map.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let values = map.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| rank_cmp(values, a, b));
    Ok(order)
}

/// The `ceil(k/100 * H*W)` most activated pixels, in rank order.
pub fn top_k_mask(map: &ActivationMap, k_percent: f64) -> Result<Vec<PixelIndex>> {
    let count = retained_count(k_percent, map.len())?;
    Ok(top_k_flat(map, count)?
        .into_iter()
        .map(|i| PixelIndex::from_flat(i, map.width()))
        .collect())
}

pub(crate) fn top_k_flat(map: &ActivationMap, count: usize) -> Result<Vec<usize>> {
    if !map.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let values = map.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    if count < order.len() {
        order.select_nth_unstable_by(count, |&a, &b| rank_cmp(values, a, b));
        order.truncate(count);
    }
    order.sort_unstable_by(|&a, &b| rank_cmp(values, a, b));
    Ok(order)
}
