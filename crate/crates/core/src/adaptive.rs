//! Exhaustive top-k threshold search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse_consensus, threshold_single, ConsensusMap};
use crate::image::ImageTensor;
use crate::map::ActivationMap;
use crate::oracle::ModelOracle;
use crate::road::{road_score, ImputationConfig, RoadScore};

/// Integer grid `15..=45`.
pub fn default_grid() -> Vec<f64> {
    (15..=45).map(f64::from).collect()
}

/// Integer grid `1..=100`.
pub fn full_grid() -> Vec<f64> {
    (1..=100).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub k_values: Vec<f64>,
    pub scores: Vec<RoadScore>,
    pub best_k: f64,
    pub best_score: f64,
}

impl ThresholdSweep {
    /// Builds a sweep from per-k scores; ties go to the smallest k.
    pub fn from_scores(k_values: Vec<f64>, scores: Vec<RoadScore>) -> Result<Self> {
        if k_values.is_empty() || k_values.len() != scores.len() {
            return Err(Error::EmptyInput("threshold sweep"));
        }
        let mut best = 0;
        for i in 1..k_values.len() {
            let (s, b) = (scores[i].combined, scores[best].combined);
            if s > b || (s == b && k_values[i] < k_values[best]) {
                best = i;
            }
        }
        Ok(Self {
            best_k: k_values[best],
            best_score: scores[best].combined,
            k_values,
            scores,
        })
    }

    pub fn combined(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.combined).collect()
    }

    /// Combined score at `k`, if it was evaluated.
    pub fn score_at(&self, k: f64) -> Option<f64> {
        self.k_values.iter().position(|&v| v == k).map(|i| self.scores[i].combined)
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().map(|s| s.combined).sum::<f64>() / self.scores.len() as f64
    }
}

/// Settings shared by every sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub k_grid: Vec<f64>,
    pub percentiles: Vec<f64>,
    pub imputation: ImputationConfig,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            k_grid: default_grid(),
            percentiles: crate::road::DEFAULT_PERCENTILES.to_vec(),
            imputation: ImputationConfig::default(),
        }
    }
}

fn check_grid(k_grid: &[f64]) -> Result<()> {
    if k_grid.is_empty() {
        return Err(Error::EmptyInput("k grid"));
    }
    if let Some(&k) = k_grid.iter().find(|&&k| !(k > 0.0 && k <= 100.0)) {
        return Err(Error::InvalidK(k));
    }
    Ok(())
}

fn sweep<F>(
    build: F,
    image: &ImageTensor,
    class_id: usize,
    oracle: &dyn ModelOracle,
    settings: &SweepSettings,
    seed: u64,
) -> Result<(ConsensusMap, ThresholdSweep)>
where
    F: Fn(f64) -> Result<ConsensusMap> + Sync,
{
    check_grid(&settings.k_grid)?;
    // Every k shares one seed so the per-k scores form a paired comparison.
    let scores = settings
        .k_grid
        .par_iter()
        .map(|&k| {
            let fused = build(k)?;
            road_score(image, &fused.map, class_id, oracle, &settings.percentiles, &settings.imputation, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let result = ThresholdSweep::from_scores(settings.k_grid.clone(), scores)?;
    Ok((build(result.best_k)?, result))
}

/// Sweeps consensus MetaCAM over `settings.k_grid` and keeps the best.
pub fn adaptive_threshold(
    maps: &[ActivationMap],
    image: &ImageTensor,
    class_id: usize,
    oracle: &dyn ModelOracle,
    settings: &SweepSettings,
    seed: u64,
) -> Result<(ConsensusMap, ThresholdSweep)> {
    if maps.is_empty() {
        return Err(Error::EmptyInput("no maps to fuse"));
    }
    sweep(|k| fuse_consensus(maps, k), image, class_id, oracle, settings, seed)
}

/// Sweeps a single thresholded map.
pub fn adaptive_threshold_single(
    map: &ActivationMap,
    image: &ImageTensor,
    class_id: usize,
    oracle: &dyn ModelOracle,
    settings: &SweepSettings,
    seed: u64,
) -> Result<(ConsensusMap, ThresholdSweep)> {
    sweep(|k| threshold_single(map, k), image, class_id, oracle, settings, seed)
}
