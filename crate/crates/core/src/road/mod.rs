//! ROAD (Remove And Debias) faithfulness scoring.
//!
//! For each perturbation percentile `p`, the most relevant (MRP) and least
//! relevant (LRP) `p%` of pixels are imputed away and the oracle's confidence
//! in the target class is recorded. The score is the mean over percentiles of
//! `(C_LRP - C_MRP) / 2`: positive when removing what the map highlights hurts
//! the model more than removing what it ignores.

mod impute;
mod solver;

pub use impute::{impute, ImputationConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::map::{ActivationMap, PixelIndex};
use crate::oracle::{check_class, ModelOracle};
use crate::select::{percent_count, ranking};

pub const DEFAULT_PERCENTILES: [f64; 4] = [20.0, 40.0, 60.0, 80.0];

/// Which end of the ranking is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Most relevant pixels.
    Mrp,
    /// Least relevant pixels.
    Lrp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadScore {
    pub percentiles: Vec<f64>,
    pub lrp_confidence: Vec<f64>,
    pub mrp_confidence: Vec<f64>,
    pub combined: f64,
}

impl RoadScore {
    pub fn from_confidences(percentiles: Vec<f64>, lrp: Vec<f64>, mrp: Vec<f64>) -> Self {
        let terms: f64 = lrp.iter().zip(&mrp).map(|(l, m)| (l - m) / 2.0).sum();
        let combined = terms / percentiles.len() as f64;
        Self {
            percentiles,
            lrp_confidence: lrp,
            mrp_confidence: mrp,
            combined,
        }
    }

    /// The score with the MRP and LRP roles exchanged.
    pub fn swapped(&self) -> Self {
        Self::from_confidences(
            self.percentiles.clone(),
            self.mrp_confidence.clone(),
            self.lrp_confidence.clone(),
        )
    }
}

fn check_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::InvalidPercentile(p));
    }
    Ok(())
}

fn mask_from_ranking(order: &[usize], percentile: f64, mode: Mode) -> Vec<usize> {
    let count = percent_count(percentile, order.len());
    match mode {
        Mode::Mrp => order[..count].to_vec(),
        Mode::Lrp => order[order.len() - count..].to_vec(),
    }
}

/// The pixels perturbed at `percentile` in `mode`.
///
/// MRP takes the top of the ranking (ties by ascending row-major index), LRP
/// the bottom (ties by descending row-major index).
pub fn relevance_mask(map: &ActivationMap, percentile: f64, mode: Mode) -> Result<Vec<PixelIndex>> {
    check_percentile(percentile)?;
    let order = ranking(map)?;
    Ok(mask_from_ranking(&order, percentile, mode)
        .into_iter()
        .map(|i| PixelIndex::from_flat(i, map.width()))
        .collect())
}

fn check_inputs(image: &ImageTensor, map: &ActivationMap, class_id: usize, oracle: &dyn ModelOracle) -> Result<()> {
    if image.spatial_dims() != map.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.spatial_dims(),
            actual: map.dims(),
        });
    }
    check_class(class_id, oracle.class_count())
}

fn score_ranked(
    image: &ImageTensor,
    order: &[usize],
    class_id: usize,
    oracle: &dyn ModelOracle,
    percentile: f64,
    mode: Mode,
    config: &ImputationConfig,
    seed: u64,
) -> Result<f64> {
    let mut masked = vec![false; order.len()];
    for i in mask_from_ranking(order, percentile, mode) {
        masked[i] = true;
    }
    let perturbed = impute::impute_flat(image, &masked, config, seed)?;
    oracle.confidence(&perturbed, class_id)
}

/// Confidence in `class_id` after perturbing one end of the map's ranking.
#[allow(clippy::too_many_arguments)]
pub fn perturb_and_score(
    image: &ImageTensor,
    map: &ActivationMap,
    class_id: usize,
    oracle: &dyn ModelOracle,
    percentile: f64,
    mode: Mode,
    config: &ImputationConfig,
    seed: u64,
) -> Result<f64> {
    check_percentile(percentile)?;
    check_inputs(image, map, class_id, oracle)?;
    config.validate()?;
    let order = ranking(map)?;
    score_ranked(image, &order, class_id, oracle, percentile, mode, config, seed)
}

/// Full ROAD evaluation of one map. Oracle queries run in parallel.
pub fn road_score(
    image: &ImageTensor,
    map: &ActivationMap,
    class_id: usize,
    oracle: &dyn ModelOracle,
    percentiles: &[f64],
    config: &ImputationConfig,
    seed: u64,
) -> Result<RoadScore> {
    if percentiles.is_empty() {
        return Err(Error::EmptyInput("no perturbation percentiles"));
    }
    for &p in percentiles {
        check_percentile(p)?;
    }
    check_inputs(image, map, class_id, oracle)?;
    config.validate()?;
    let order = ranking(map)?;
    let jobs: Vec<(f64, Mode)> = percentiles
        .iter()
        .flat_map(|&p| [(p, Mode::Lrp), (p, Mode::Mrp)])
        .collect();
    let confidences = jobs
        .par_iter()
        .map(|&(p, mode)| score_ranked(image, &order, class_id, oracle, p, mode, config, seed))
        .collect::<Result<Vec<f64>>>()?;
    let lrp = confidences.iter().step_by(2).copied().collect();
    let mrp = confidences.iter().skip(1).step_by(2).copied().collect();
    Ok(RoadScore::from_confidences(percentiles.to_vec(), lrp, mrp))
}
