//! Campaign manifests and report emission.
//!
//! ```json
//! {
//!   "groups": { "A": ["maps/HiResCAM.camm", "maps/GradCAMElementwise.camm"], "B": ["@random"] },
//!   "image": "image.imgt",
//!   "class_id": 281,
//!   "oracle": "model.onnx",
//!   "k_grid": [15, 20, 25],
//!   "percentiles": [20, 40, 60, 80],
//!   "sigma": 0.05,
//!   "seed": 7,
//!   "workers": 4
//! }
//! ```
//!
//! With `"bundle"` set, image, class and oracle default to the bundle's,
//! group members may name bundle maps by label, and omitting `groups` selects
//! the default A-F table. `@random` stands for a RandomCAM drawn from the
//! manifest seed. Groups are ordered by code.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use camforge_core::adaptive::{default_grid, SweepSettings};
use camforge_core::cre::{campaign_cre, CreReport, ScoreSource};
use camforge_core::ensemble::{default_groups, run_campaign, CamGroup, CampaignInput, CampaignResult};
use camforge_core::format::{read_image, read_map};
use camforge_core::fusion::{fuse_consensus, random_cam};
use camforge_core::map::is_valid;
use camforge_core::oracle::ModelOracle;
use camforge_core::road::{ImputationConfig, DEFAULT_PERCENTILES};
use camforge_core::{seed, ActivationMap, ImageTensor};
use serde::{Deserialize, Serialize};

use crate::bundle::{load_oracle, resolve, Bundle};
use crate::failure::{Classify, CliResult, Failure};
use crate::output::{write_atomic, write_csv};

pub const RANDOM_MEMBER: &str = "@random";
pub const REPORT_FORMAT: &str = "camforge-campaign-report/1";

fn default_percentiles() -> Vec<f64> {
    DEFAULT_PERCENTILES.to_vec()
}

fn default_sigma() -> f64 {
    ImputationConfig::default().noise_sigma
}

pub type GroupTable = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignManifest {
    #[serde(default)]
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub groups: Option<GroupTable>,
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub class_id: Option<usize>,
    #[serde(default)]
    pub oracle: Option<PathBuf>,
    #[serde(default = "default_grid")]
    pub k_grid: Vec<f64>,
    #[serde(default = "default_percentiles")]
    pub percentiles: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub score_source: ScoreSource,
}

/// A manifest with every input loaded.
pub struct Campaign {
    pub groups: Vec<CamGroup>,
    pub image: ImageTensor,
    pub class_id: usize,
    pub oracle: Arc<dyn ModelOracle>,
    pub maps: BTreeMap<String, ActivationMap>,
    pub settings: SweepSettings,
    pub seed: u64,
    pub workers: Option<usize>,
    pub score_source: ScoreSource,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

pub fn read_manifest(path: &Path) -> anyhow::Result<CampaignManifest> {
    read_json(path, "campaign manifest")
}

pub fn read_group_table(path: &Path) -> anyhow::Result<GroupTable> {
    read_json(path, "group table")
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).to_path_buf()
}

impl Campaign {
    /// Loads a manifest. `groups_file` replaces the manifest's group table and
    /// `workers` overrides both the manifest and `CAMFORGE_WORKERS`.
    pub fn load(manifest_path: &Path, groups_file: Option<&Path>, workers: Option<usize>) -> CliResult<Self> {
        Self::load_inner(manifest_path, groups_file, workers).input()
    }

    fn load_inner(manifest_path: &Path, groups_file: Option<&Path>, workers: Option<usize>) -> anyhow::Result<Self> {
        let manifest = read_manifest(manifest_path)?;
        let base = base_dir(manifest_path);
        let bundle = manifest
            .bundle
            .as_ref()
            .map(|p| Bundle::load(&resolve(&base, p)))
            .transpose()?;

        let image = match (&manifest.image, &bundle) {
            (Some(p), _) => {
                let p = resolve(&base, p);
                read_image(&p).with_context(|| format!("reading image {}", p.display()))?
            }
            (None, Some(b)) => b.image.clone(),
            (None, None) => bail!("campaign manifest has no `image` field"),
        };
        let class_id = manifest
            .class_id
            .or(bundle.as_ref().map(Bundle::class_id))
            .ok_or_else(|| anyhow!("campaign manifest has no `class_id` field"))?;
        let oracle = match (&manifest.oracle, &bundle) {
            (Some(p), _) => load_oracle(&resolve(&base, p), &image)?,
            (None, Some(b)) if b.has_oracle() => b.oracle()?,
            _ => bail!("campaign manifest has no `oracle` field"),
        };
        if class_id >= oracle.class_count() {
            bail!("class_id {class_id} out of range for an oracle with {} classes", oracle.class_count());
        }

        let (table, table_base) = match groups_file {
            Some(f) => (Some(read_group_table(f)?), base_dir(f)),
            None => (manifest.groups.clone(), base.clone()),
        };

        let mut maps = BTreeMap::new();
        let (h, w) = image.spatial_dims();
        let mut add_member = |entry: &str| -> anyhow::Result<String> {
            let map = if entry == RANDOM_MEMBER {
                random_cam(h, w, seed::derive(manifest.seed, seed::stream::RANDOM_CAM, 0))?
            } else if let Some(m) = bundle.as_ref().and_then(|b| b.maps.get(entry)) {
                m.clone()
            } else if bundle.as_ref().is_some_and(|b| b.manifest.invalid.iter().any(|i| i == entry)) {
                // exporter could not produce it; the validity filter drops it
                ActivationMap::zeros(h, w)?.with_label(entry)
            } else {
                let p = resolve(&table_base, Path::new(entry));
                read_map(&p).with_context(|| format!("reading group member {entry}"))?
            };
            if map.dims() != (h, w) {
                bail!("map {} is {:?} but the image is {:?}", map.label(), map.dims(), (h, w));
            }
            let label = map.label().to_string();
            if maps.insert(label.clone(), map).is_some() {
                bail!("map {label:?} appears in more than one group");
            }
            Ok(label)
        };

        let groups = match table {
            Some(table) => table
                .iter()
                .map(|(code, members)| {
                    let members = members.iter().map(|m| add_member(m)).collect::<anyhow::Result<Vec<_>>>()?;
                    Ok(CamGroup {
                        code: code.clone(),
                        members,
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?,
            None if bundle.is_some() => {
                let groups = default_groups();
                for m in groups.iter().flat_map(|g| &g.members) {
                    add_member(m)?;
                }
                groups
            }
            None => bail!("campaign manifest has no `groups` field"),
        };

        let imputation = ImputationConfig {
            noise_sigma: manifest.sigma,
            ..ImputationConfig::default()
        };
        imputation.validate()?;
        let workers = workers
            .or_else(camforge_core::ensemble::workers_from_env)
            .or(manifest.workers);
        Ok(Self {
            groups,
            image,
            class_id,
            oracle,
            maps,
            settings: SweepSettings {
                k_grid: manifest.k_grid,
                percentiles: manifest.percentiles,
                imputation,
            },
            seed: manifest.seed,
            workers,
            score_source: manifest.score_source,
        })
    }

    pub fn run(&self) -> CliResult<CampaignResult> {
        let input = CampaignInput {
            image: &self.image,
            class_id: self.class_id,
            oracle: self.oracle.as_ref(),
            maps: &self.maps,
        };
        run_campaign(&input, &self.groups, &self.settings, self.seed, self.workers).map_err(Failure::from_core)
    }

    /// MetaCAM of the best experiment at its best threshold.
    pub fn best_metacam(&self, result: &CampaignResult) -> Option<ActivationMap> {
        let id = result.max_set?;
        let record = result.experiments.iter().find(|e| e.id == id)?;
        let maps: Vec<ActivationMap> = record
            .members
            .iter()
            .map(|m| &self.maps[m])
            .filter(|m| is_valid(m))
            .cloned()
            .collect();
        fuse_consensus(&maps, record.sweep.as_ref()?.best_k).ok().map(|c| c.map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub format: String,
    pub class_id: usize,
    pub percentiles: Vec<f64>,
    pub sigma: f64,
    pub score_source: ScoreSource,
    pub executed: usize,
    pub failed: usize,
    pub campaign: CampaignResult,
    pub cre: Option<CreReport>,
}

impl CampaignReport {
    pub fn new(campaign: &Campaign, result: CampaignResult) -> Self {
        let cre = campaign_cre(&result, campaign.score_source).ok();
        Self {
            format: REPORT_FORMAT.into(),
            class_id: campaign.class_id,
            percentiles: campaign.settings.percentiles.clone(),
            sigma: campaign.settings.imputation.noise_sigma,
            score_source: campaign.score_source,
            executed: result.executed_count(),
            failed: result.failures().count(),
            campaign: result,
            cre,
        }
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn read_report(path: &Path) -> anyhow::Result<CampaignReport> {
    read_json(path, "campaign report")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes `report.json` and the CSV tables into `dir`.
pub fn write_tables(dir: &Path, report: &CampaignReport) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    let result = &report.campaign;

    let mut rows = Vec::new();
    let mut sweep_rows = Vec::new();
    for e in result.experiments.iter().filter(|e| !e.id.is_empty()) {
        let (best_k, best, mean) = match &e.sweep {
            Some(s) => (fmt(s.best_k), fmt(s.best_score), fmt(s.mean_score())),
            None => Default::default(),
        };
        rows.push(vec![
            e.id.code(),
            e.members.join(";"),
            best_k,
            best,
            mean,
            e.dropped.join(";"),
            e.error.clone().unwrap_or_default(),
        ]);
        if let Some(s) = &e.sweep {
            for (k, score) in s.k_values.iter().zip(&s.scores) {
                sweep_rows.push(vec![e.id.code(), fmt(*k), fmt(score.combined)]);
            }
        }
    }
    write_csv(
        &dir.join("experiments.csv"),
        &["experiment", "members", "best_k", "best_score", "mean_score", "dropped", "error"],
        &rows,
    )?;
    write_csv(&dir.join("sweeps.csv"), &["experiment", "k", "combined"], &sweep_rows)?;

    let k_rows: Vec<Vec<String>> = result
        .k_statistics
        .iter()
        .map(|s| {
            vec![
                fmt(s.k),
                s.experiments.to_string(),
                fmt(s.mean),
                fmt(s.sd),
                fmt(s.ci_low),
                fmt(s.ci_high),
                s.best_k_count.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("k_stats.csv"),
        &["k", "experiments", "mean", "sd", "ci_low", "ci_high", "best_k_count"],
        &k_rows,
    )?;

    if let Some(cre) = &report.cre {
        write_cre(dir, cre)?;
    }
    Ok(())
}

/// Writes `cre.json` and the signed-bar table `cre.csv`.
pub fn write_cre(dir: &Path, cre: &CreReport) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("cre.json"), (serde_json::to_string_pretty(cre)? + "\n").as_bytes())?;
    let rows: Vec<Vec<String>> = cre
        .group_codes
        .iter()
        .zip(&cre.residuals)
        .zip(&cre.inclusion_counts)
        .map(|((g, r), n)| vec![g.clone(), fmt(*r), n.to_string()])
        .collect();
    write_csv(&dir.join("cre.csv"), &["group", "cumulative_residual", "inclusion_count"], &rows)
}
