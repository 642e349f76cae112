//! Combining component maps into a MetaCAM.
//!
//! All fusions normalize each component to `[0, 1]` first. Invalid maps must
//! be removed beforehand with [`crate::map::filter_valid`].

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{normalize, ActivationMap};
use crate::select::{retained_count, top_k_flat};

/// How ROAD scores are turned into fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightTransform {
    /// Scores used as-is. Any negative score makes the weights degenerate.
    Raw,
    /// `(s - min) / (max - min)`.
    MinMax,
    /// Softmax after scaling scores up by powers of ten until `max |s| >= 10`.
    Softmax,
    /// `exp(s) / sum(exp(s))`.
    Exponential,
}

/// Output of [`fuse_weighted`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFusion {
    pub map: ActivationMap,
    /// The weights actually applied, summing to one.
    pub weights: Vec<f64>,
    /// Set when the transformed weights were unusable and uniform weights were
    /// substituted.
    pub degenerate_weights: bool,
}

/// A thresholded summed map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMap {
    /// Summed normalized activations on retained pixels, zero elsewhere.
    pub map: ActivationMap,
    pub k_percent: f64,
    /// Smallest retained summed value.
    pub threshold_value: f64,
}

impl ConsensusMap {
    pub fn retained(&self) -> usize {
        retained_count(self.k_percent, self.map.len()).unwrap_or(0)
    }
}

fn normalized_stack(maps: &[ActivationMap]) -> Result<Vec<ActivationMap>> {
    let first = maps.first().ok_or(Error::EmptyInput("no maps to fuse"))?;
    maps.iter()
        .map(|m| {
            first.same_shape(m)?;
            normalize(m)
        })
        .collect()
}

fn weighted_sum(maps: &[ActivationMap], weights: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; maps[0].len()];
    for (map, &w) in maps.iter().zip(weights) {
        for (a, &v) in acc.iter_mut().zip(map.values()) {
            *a += w * v;
        }
    }
    acc
}

/// Plain mean of the normalized maps, re-normalized.
pub fn fuse_average(maps: &[ActivationMap]) -> Result<ActivationMap> {
    let stack = normalized_stack(maps)?;
    let n = stack.len() as f64;
    let mean: Vec<f64> = weighted_sum(&stack, &vec![1.0; stack.len()])
        .into_iter()
        .map(|v| v / n)
        .collect();
    let (h, w) = stack[0].dims();
    normalize(&ActivationMap::new(h, w, mean)?.with_label("MetaCAM-average"))
}

/// Applies `transform` to ROAD scores. Returns unit-sum weights and whether
/// the uniform fallback was used.
pub fn transform_weights(scores: &[f64], transform: WeightTransform) -> Result<(Vec<f64>, bool)> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to transform"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let raw: Vec<f64> = match transform {
        WeightTransform::Raw => {
            if scores.iter().any(|&s| s < 0.0) {
                vec![0.0; scores.len()]
            } else {
                scores.to_vec()
            }
        }
        WeightTransform::MinMax => {
            let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                scores.iter().map(|&s| (s - lo) / (hi - lo)).collect()
            } else {
                vec![0.0; scores.len()]
            }
        }
        WeightTransform::Softmax => {
            let peak = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            let mut scale = 1.0;
            if peak > 0.0 {
                while peak * scale < 10.0 {
                    scale *= 10.0;
                }
            }
            softmax(&scores.iter().map(|s| s * scale).collect::<Vec<_>>())
        }
        WeightTransform::Exponential => softmax(scores),
    };
    let total: f64 = raw.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok((raw.iter().map(|w| w / total).collect(), false))
    } else {
        let n = scores.len() as f64;
        Ok((vec![1.0 / n; scores.len()], true))
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let peak = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - peak).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `sum(w_n * L_n) / sum(w_n)` over normalized maps, re-normalized.
pub fn fuse_weighted(
    maps: &[ActivationMap],
    road_scores: &[f64],
    transform: WeightTransform,
) -> Result<WeightedFusion> {
    let stack = normalized_stack(maps)?;
    if road_scores.len() != stack.len() {
        return Err(Error::InvalidConfig(format!(
            "{} maps but {} scores",
            stack.len(),
            road_scores.len()
        )));
    }
    let (weights, degenerate_weights) = transform_weights(road_scores, transform)?;
    let total: f64 = weights.iter().sum();
    let fused: Vec<f64> = weighted_sum(&stack, &weights)
        .into_iter()
        .map(|v| v / total)
        .collect();
    let (h, w) = stack[0].dims();
    let map = normalize(&ActivationMap::new(h, w, fused)?.with_label("MetaCAM-weighted"))?;
    Ok(WeightedFusion {
        map,
        weights,
        degenerate_weights,
    })
}

/// Sums the normalized maps and keeps only the top `k_percent` of pixels.
pub fn fuse_consensus(maps: &[ActivationMap], k_percent: f64) -> Result<ConsensusMap> {
    let stack = normalized_stack(maps)?;
    let (h, w) = stack[0].dims();
    let summed = ActivationMap::new(h, w, weighted_sum(&stack, &vec![1.0; stack.len()]))?;
    let label = if stack.len() == 1 {
        stack[0].label().to_string()
    } else {
        "MetaCAM".to_string()
    };
    threshold_summed(summed.with_label(label), k_percent)
}

/// Top-k thresholding of a single component map.
pub fn threshold_single(map: &ActivationMap, k_percent: f64) -> Result<ConsensusMap> {
    fuse_consensus(std::slice::from_ref(map), k_percent)
}

fn threshold_summed(summed: ActivationMap, k_percent: f64) -> Result<ConsensusMap> {
    let count = retained_count(k_percent, summed.len())?;
    let keep = top_k_flat(&summed, count)?;
    let threshold_value = summed.values()[*keep.last().expect("count >= 1")];
    let mut values = vec![0.0; summed.len()];
    for &i in &keep {
        values[i] = summed.values()[i];
    }
    let map = ActivationMap::new(summed.height(), summed.width(), values)?
        .with_label(summed.label().to_string());
    Ok(ConsensusMap {
        map,
        k_percent,
        threshold_value,
    })
}

/// A control map drawn uniformly from `[-1, 1]`, not yet normalized.
pub fn random_cam(height: usize, width: usize, seed: u64) -> Result<ActivationMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let values = (0..height * width).map(|_| dist.sample(&mut rng)).collect();
    Ok(ActivationMap::new(height, width, values)?.with_label("RandomCAM"))
}
