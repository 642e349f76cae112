//! CAM-group inclusion/exclusion campaigns.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adaptive::{adaptive_threshold, SweepSettings, ThresholdSweep};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::map::{is_valid, ActivationMap};
use crate::oracle::ModelOracle;
use crate::seed;

pub const MAX_GROUPS: usize = 16;

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CamGroup {
    pub code: String,
    pub members: Vec<String>,
}

impl CamGroup {
    pub fn new(code: impl Into<String>, members: &[&str]) -> Self {
        Self {
            code: code.into(),
            members: members.iter().map(|m| m.to_string()).collect(),
        }
    }
}

/// The six methodological groupings A-F.
pub fn default_groups() -> Vec<CamGroup> {
    vec![
        CamGroup::new("A", &["HiResCAM", "GradCAMElementwise"]),
        CamGroup::new("B", &["GradCAM", "GradCAM++"]),
        CamGroup::new("C", &["XGradCAM"]),
        CamGroup::new("D", &["AblationCAM", "ScoreCAM"]),
        CamGroup::new("E", &["LayerCAM"]),
        CamGroup::new("F", &["FullGrad"]),
    ]
}

/// Checks size, code uniqueness and member disjointness.
pub fn validate_groups(groups: &[CamGroup]) -> Result<()> {
    if groups.len() > MAX_GROUPS {
        return Err(Error::TooManyGroups(groups.len()));
    }
    if groups.is_empty() {
        return Err(Error::InvalidGroups("no groups".into()));
    }
    let mut codes = HashSet::new();
    let mut members = HashSet::new();
    for g in groups {
        if g.code.is_empty() || !codes.insert(g.code.as_str()) {
            return Err(Error::InvalidGroups(format!("duplicate or empty group code {:?}", g.code)));
        }
        if g.members.is_empty() {
            return Err(Error::InvalidGroups(format!("group {} has no members", g.code)));
        }
        for m in &g.members {
            if !members.insert(m.as_str()) {
                return Err(Error::InvalidGroups(format!("{m:?} belongs to more than one group")));
            }
        }
    }
    Ok(())
}

/// One point of the inclusion lattice. Bit `n - 1 - i` marks group `i`, so
/// the first group is the most significant digit of [`CamSetId::code`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CamSetId {
    group_count: u8,
    mask: u32,
}

impl CamSetId {
    /// `mask = 0` is the formal empty set.
    pub fn new(mask: u32, group_count: usize) -> Result<Self> {
        if group_count == 0 || group_count > MAX_GROUPS {
            return Err(Error::TooManyGroups(group_count));
        }
        if mask >= 1 << group_count {
            return Err(Error::InvalidGroups(format!("mask {mask} needs more than {group_count} groups")));
        }
        Ok(Self {
            group_count: group_count as u8,
            mask,
        })
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn group_count(&self) -> usize {
        usize::from(self.group_count)
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn contains(&self, group: usize) -> bool {
        group < self.group_count() && self.mask >> (self.group_count() - 1 - group) & 1 == 1
    }

    pub fn included(&self) -> Vec<usize> {
        (0..self.group_count()).filter(|&g| self.contains(g)).collect()
    }

    /// Binary code, e.g. `100000` for group A alone.
    pub fn code(&self) -> String {
        format!("{:0width$b}", self.mask, width = self.group_count())
    }

    pub fn parse(code: &str) -> Result<Self> {
        if code.is_empty() || !code.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::InvalidGroups(format!("bad experiment code {code:?}")));
        }
        if code.len() > MAX_GROUPS {
            return Err(Error::TooManyGroups(code.len()));
        }
        Self::new(u32::from_str_radix(code, 2).expect("binary digits"), code.len())
    }

    /// Member labels of the included groups, in group order.
    pub fn members<'a>(&self, groups: &'a [CamGroup]) -> Result<Vec<&'a str>> {
        if groups.len() != self.group_count() {
            return Err(Error::GroupTableMismatch);
        }
        Ok(self
            .included()
            .into_iter()
            .flat_map(|g| groups[g].members.iter().map(String::as_str))
            .collect())
    }
}

impl fmt::Display for CamSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl Serialize for CamSetId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for CamSetId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = String::deserialize(d)?;
        Self::parse(&code).map_err(serde::de::Error::custom)
    }
}

fn group_count(groups: &[CamGroup]) -> Result<usize> {
    if groups.len() > MAX_GROUPS {
        return Err(Error::TooManyGroups(groups.len()));
    }
    if groups.is_empty() {
        return Err(Error::InvalidGroups("no groups".into()));
    }
    Ok(groups.len())
}

/// All non-empty experiments in ascending bitmask order.
pub fn enumerate_camsets(groups: &[CamGroup]) -> Result<Vec<CamSetId>> {
    Ok(formal_lattice(groups)?.into_iter().skip(1).collect())
}

/// The full `2^n` lattice, starting with the empty set.
pub fn formal_lattice(groups: &[CamGroup]) -> Result<Vec<CamSetId>> {
    let n = group_count(groups)?;
    (0..1u32 << n).map(|mask| CamSetId::new(mask, n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: CamSetId,
    pub members: Vec<String>,
    /// Member maps removed by the validity filter.
    pub dropped: Vec<String>,
    /// `None` for the empty set and for failed experiments.
    pub sweep: Option<ThresholdSweep>,
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn best_score(&self) -> Option<f64> {
        self.sweep.as_ref().map(|s| s.best_score)
    }
}

/// Statistics across completed experiments at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KStatistics {
    pub k: f64,
    pub experiments: usize,
    pub mean: f64,
    /// Sample standard deviation; zero with a single experiment.
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Experiments whose best threshold is this k.
    pub best_k_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub groups: Vec<CamGroup>,
    pub k_grid: Vec<f64>,
    pub seed: u64,
    /// Every point of the lattice, empty set first.
    pub experiments: Vec<ExperimentRecord>,
    pub k_statistics: Vec<KStatistics>,
    pub max_score: Option<f64>,
    pub max_set: Option<CamSetId>,
}

impl CampaignResult {
    pub fn completed(&self) -> impl Iterator<Item = (&ExperimentRecord, &ThresholdSweep)> {
        self.experiments.iter().filter_map(|e| e.sweep.as_ref().map(|s| (e, s)))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ExperimentRecord> {
        self.experiments.iter().filter(|e| e.error.is_some())
    }

    pub fn executed_count(&self) -> usize {
        self.experiments.iter().filter(|e| !e.id.is_empty()).count()
    }

    /// How many lattice points include each group.
    pub fn inclusion_counts(&self) -> Vec<usize> {
        (0..self.groups.len())
            .map(|g| self.experiments.iter().filter(|e| e.id.contains(g)).count())
            .collect()
    }
}

/// Mean, sample sd and normal-approximation interval of one column.
pub fn interval(values: &[f64], z: f64) -> (f64, f64, f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    let half = z * sd / m.sqrt();
    (mean, sd, mean - half, mean + half)
}

fn k_statistics(k_grid: &[f64], sweeps: &[&ThresholdSweep]) -> Vec<KStatistics> {
    if sweeps.is_empty() {
        return Vec::new();
    }
    k_grid
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let column: Vec<f64> = sweeps.iter().map(|s| s.scores[i].combined).collect();
            let (mean, sd, ci_low, ci_high) = interval(&column, Z_95);
            KStatistics {
                k,
                experiments: column.len(),
                mean,
                sd,
                ci_low,
                ci_high,
                best_k_count: sweeps.iter().filter(|s| s.best_k == k).count(),
            }
        })
        .collect()
}

/// Everything an experiment needs besides the lattice.
pub struct CampaignInput<'a> {
    pub image: &'a ImageTensor,
    pub class_id: usize,
    pub oracle: &'a dyn ModelOracle,
    /// Map table keyed by label.
    pub maps: &'a BTreeMap<String, ActivationMap>,
}

/// Runs adaptive-threshold MetaCAM for every non-empty group combination.
///
/// Individual experiment failures are recorded rather than propagated. All
/// experiments share one imputation seed derived from `seed`. `workers`
/// sizes the thread pool; `None` uses the global pool.
pub fn run_campaign(
    input: &CampaignInput<'_>,
    groups: &[CamGroup],
    settings: &SweepSettings,
    seed: u64,
    workers: Option<usize>,
) -> Result<CampaignResult> {
    validate_groups(groups)?;
    for member in groups.iter().flat_map(|g| &g.members) {
        if !input.maps.contains_key(member) {
            return Err(Error::MissingMap(member.clone()));
        }
    }
    if settings.k_grid.is_empty() {
        return Err(Error::EmptyInput("k grid"));
    }
    let lattice = formal_lattice(groups)?;
    let noise_seed = seed::derive(seed, seed::stream::IMPUTATION, 0);

    let run = |id: &CamSetId| -> ExperimentRecord {
        let members = id.members(groups).expect("lattice matches groups");
        let mut record = ExperimentRecord {
            id: *id,
            members: members.iter().map(|m| m.to_string()).collect(),
            dropped: Vec::new(),
            sweep: None,
            error: None,
        };
        if id.is_empty() {
            return record;
        }
        let mut maps = Vec::with_capacity(members.len());
        for m in members {
            let map = &input.maps[m];
            if is_valid(map) {
                maps.push(map.clone());
            } else {
                record.dropped.push(m.to_string());
            }
        }
        if maps.is_empty() {
            record.error = Some("every member map is invalid".into());
            return record;
        }
        match adaptive_threshold(&maps, input.image, input.class_id, input.oracle, settings, noise_seed) {
            Ok((_, sweep)) => record.sweep = Some(sweep),
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    };

    let experiments: Vec<ExperimentRecord> = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(|| lattice.par_iter().map(run).collect()),
        None => lattice.par_iter().map(run).collect(),
    };

    let sweeps: Vec<&ThresholdSweep> = experiments.iter().filter_map(|e| e.sweep.as_ref()).collect();
    let k_statistics = k_statistics(&settings.k_grid, &sweeps);
    let mut max_score = None;
    let mut max_set = None;
    for e in &experiments {
        if let Some(s) = e.best_score() {
            // strict comparison keeps the lowest bitmask on ties
            if max_score.is_none_or(|m| s > m) {
                max_score = Some(s);
                max_set = Some(e.id);
            }
        }
    }
    Ok(CampaignResult {
        groups: groups.to_vec(),
        k_grid: settings.k_grid.clone(),
        seed,
        experiments,
        k_statistics,
        max_score,
        max_set,
    })
}

/// Worker count from `CAMFORGE_WORKERS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("CAMFORGE_WORKERS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}
