//! Cumulative Residual Effect: per-group sums of `score - median` over the
//! experiments that include the group.

use serde::{Deserialize, Serialize};

use crate::ensemble::{CamSetId, CampaignResult};
use crate::error::{Error, Result};

/// Which per-experiment number feeds the residuals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreSource {
    /// The sweep's best combined score.
    #[default]
    BestScore,
    /// Mean combined score over the sweep grid.
    SweepMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreReport {
    pub group_codes: Vec<String>,
    /// Unset for aggregated reports.
    pub median_score: Option<f64>,
    pub residuals: Vec<f64>,
    pub inclusion_counts: Vec<usize>,
}

impl CreReport {
    pub fn get(&self, code: &str) -> Option<f64> {
        self.group_codes.iter().position(|c| c == code).map(|i| self.residuals[i])
    }
}

/// Median with the mean-of-middle-pair rule for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no scores"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 0 {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    })
}

/// CRE over `(experiment, score)` pairs. An empty-set score counts toward the
/// median but toward no group.
pub fn compute_cre(group_codes: &[String], results: &[(CamSetId, f64)]) -> Result<CreReport> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no experiment scores"));
    }
    if results.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if results.iter().any(|(id, _)| id.group_count() != group_codes.len()) {
        return Err(Error::GroupTableMismatch);
    }
    let scores: Vec<f64> = results.iter().map(|(_, s)| *s).collect();
    let m = median(&scores)?;
    let n = group_codes.len();
    let mut residuals = vec![0.0; n];
    let mut inclusion_counts = vec![0; n];
    for (id, score) in results {
        for g in id.included() {
            residuals[g] += score - m;
            inclusion_counts[g] += 1;
        }
    }
    Ok(CreReport {
        group_codes: group_codes.to_vec(),
        median_score: Some(m),
        residuals,
        inclusion_counts,
    })
}

/// CRE of a campaign's completed experiments.
pub fn campaign_cre(result: &CampaignResult, source: ScoreSource) -> Result<CreReport> {
    let codes: Vec<String> = result.groups.iter().map(|g| g.code.clone()).collect();
    let scores: Vec<(CamSetId, f64)> = result
        .completed()
        .map(|(e, s)| {
            let score = match source {
                ScoreSource::BestScore => s.best_score,
                ScoreSource::SweepMean => s.mean_score(),
            };
            (e.id, score)
        })
        .collect();
    compute_cre(&codes, &scores)
}

/// Elementwise sum across campaigns over the same group table. A single
/// report is returned unchanged.
pub fn aggregate_cre(reports: &[CreReport]) -> Result<CreReport> {
    let (first, rest) = reports.split_first().ok_or(Error::EmptyInput("no reports"))?;
    if rest.is_empty() {
        return Ok(first.clone());
    }
    let mut total = CreReport {
        median_score: None,
        ..first.clone()
    };
    for r in rest {
        if r.group_codes != total.group_codes {
            return Err(Error::GroupTableMismatch);
        }
        for g in 0..total.residuals.len() {
            total.residuals[g] += r.residuals[g];
            total.inclusion_counts[g] += r.inclusion_counts[g];
        }
    }
    Ok(total)
}
