//! Command-line front end: bundle I/O, campaign orchestration and report
//! emission.

pub mod bundle;
pub mod campaign;
pub mod chart;
pub mod failure;
pub mod output;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use camforge_core::adaptive::{adaptive_threshold, adaptive_threshold_single, default_grid, full_grid, SweepSettings};
use camforge_core::cre::{aggregate_cre, campaign_cre, ScoreSource};
use camforge_core::format::{read_image, read_map, write_map};
use camforge_core::fusion::{fuse_average, fuse_consensus, fuse_weighted, WeightTransform};
use camforge_core::map::filter_valid;
use camforge_core::oracle::ModelOracle;
use camforge_core::road::{road_score, ImputationConfig, RoadScore, DEFAULT_PERCENTILES};
use camforge_core::{seed, ActivationMap};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bundle::Bundle;
use crate::campaign::{read_report, write_cre, write_tables, Campaign, CampaignReport};
use crate::failure::{Classify, CliResult, Failure};
use crate::output::write_atomic;

pub const REPORT_SCHEMA: &str = include_str!("../schema/campaign-report.schema.json");

#[derive(Debug, Parser)]
#[command(name = "camforge", version, about = "Saliency-map fusion and ROAD evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse bundle maps into one map.
    Fuse(FuseArgs),
    /// ROAD score of one map, printed as JSON.
    Road(RoadArgs),
    /// Adaptive threshold sweep over a bundle's maps.
    Sweep(SweepArgs),
    /// Run every group inclusion/exclusion experiment of a manifest.
    Campaign(CampaignArgs),
    /// Cumulative residual effect of one or more campaign reports.
    Cre(CreArgs),
    /// Render a heat-map overlay or a report's charts.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// ROAD perturbation percentiles.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PERCENTILES.to_vec())]
    pub percentiles: Vec<f64>,
    /// Standard deviation of the imputation noise.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EvalArgs {
    fn imputation(&self) -> CliResult<ImputationConfig> {
        let config = ImputationConfig {
            noise_sigma: self.sigma,
            ..ImputationConfig::default()
        };
        config.validate().input()?;
        Ok(config)
    }

    fn noise_seed(&self) -> u64 {
        seed::derive(self.seed, seed::stream::IMPUTATION, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FuseMode {
    Average,
    Weighted,
    Consensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Raw,
    Minmax,
    Softmax,
    Exponential,
}

impl From<TransformArg> for WeightTransform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Raw => WeightTransform::Raw,
            TransformArg::Minmax => WeightTransform::MinMax,
            TransformArg::Softmax => WeightTransform::Softmax,
            TransformArg::Exponential => WeightTransform::Exponential,
        }
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Bundle directory or manifest file.
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_enum, default_value_t = FuseMode::Consensus)]
    pub mode: FuseMode,
    /// Retention level for consensus fusion, in percent.
    #[arg(long, default_value_t = 100.0)]
    pub k: f64,
    #[arg(long, value_enum, default_value_t = TransformArg::Minmax)]
    pub transform: TransformArg,
    /// Per-map scores for weighted fusion; computed with ROAD when omitted.
    #[arg(long, value_delimiter = ',')]
    pub scores: Vec<f64>,
    /// Map labels to fuse; all valid maps when omitted.
    #[arg(long, value_delimiter = ',')]
    pub maps: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct RoadArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Label of a bundle map.
    #[arg(long, conflicts_with = "map_file", required_unless_present = "map_file")]
    pub map: Option<String>,
    /// A CAMM file to score instead of a bundle map.
    #[arg(long)]
    pub map_file: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Maps fused by consensus; all valid maps when omitted.
    #[arg(long, value_delimiter = ',', conflicts_with = "single")]
    pub maps: Vec<String>,
    /// Sweep one thresholded map instead of a consensus.
    #[arg(long)]
    pub single: Option<String>,
    /// Explicit k grid; the integer grid 15..=45 when omitted.
    #[arg(long, value_delimiter = ',', conflicts_with = "full_range")]
    pub grid: Vec<f64>,
    /// Use the integer grid 1..=100.
    #[arg(long)]
    pub full_range: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the best thresholded map.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Group table replacing the manifest's.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Worker threads; overrides CAMFORGE_WORKERS and the manifest.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub no_charts: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    BestScore,
    SweepMean,
}

#[derive(Debug, Args)]
pub struct CreArgs {
    /// Campaign report files; several are aggregated.
    #[arg(long = "report", required = true)]
    pub reports: Vec<PathBuf>,
    /// Score per experiment; defaults to each report's setting.
    #[arg(long, value_enum)]
    pub source: Option<SourceArg>,
    /// Directory for cre.json, cre.csv and cre.png.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// CAMM map to overlay.
    #[arg(long, conflicts_with = "report", required_unless_present = "report")]
    pub map: Option<PathBuf>,
    /// IMGT image under the overlay.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Campaign report whose charts are redrawn.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// PNG file for an overlay, directory for report charts.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fuse(a) => fuse(a),
        Command::Road(a) => road(a),
        Command::Sweep(a) => sweep(a),
        Command::Campaign(a) => run_campaign_command(a),
        Command::Cre(a) => cre(a),
        Command::Render(a) => render(a),
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult<String> {
    let text = serde_json::to_string_pretty(value).compute()?;
    println!("{text}");
    Ok(text)
}

fn valid_maps(maps: Vec<ActivationMap>) -> CliResult<Vec<ActivationMap>> {
    let (valid, dropped) = filter_valid(maps);
    for label in dropped {
        eprintln!("warning: dropping invalid map {label}");
    }
    if valid.is_empty() {
        return Err(Failure::Input(anyhow!("no valid maps to fuse")));
    }
    Ok(valid)
}

fn score(
    bundle: &Bundle,
    oracle: &dyn ModelOracle,
    map: &ActivationMap,
    eval: &EvalArgs,
    config: &ImputationConfig,
) -> CliResult<RoadScore> {
    road_score(
        &bundle.image,
        map,
        bundle.class_id(),
        oracle,
        &eval.percentiles,
        config,
        eval.noise_seed(),
    )
    .map_err(Failure::from_core)
}

#[derive(Serialize)]
struct FuseSummary {
    label: String,
    mode: &'static str,
    out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    retained: Option<usize>,
    road: Option<RoadScore>,
}

fn fuse(a: FuseArgs) -> CliResult<()> {
    let bundle = Bundle::load(&a.bundle).input()?;
    let maps = valid_maps(bundle.select(&a.maps).input()?)?;
    let config = a.eval.imputation()?;
    let oracle = if bundle.has_oracle() { Some(bundle.oracle().input()?) } else { None };
    let mut summary = FuseSummary {
        label: String::new(),
        mode: "",
        out: a.out.clone(),
        weights: None,
        retained: None,
        road: None,
    };
    let fused = match a.mode {
        FuseMode::Average => {
            summary.mode = "average";
            fuse_average(&maps).map_err(Failure::from_core)?
        }
        FuseMode::Weighted => {
            summary.mode = "weighted";
            let scores = if a.scores.is_empty() {
                let oracle = oracle
                    .as_deref()
                    .ok_or_else(|| Failure::Input(anyhow!("weighted fusion needs --scores or an `oracle` field in the bundle")))?;
                maps.iter()
                    .map(|m| score(&bundle, oracle, m, &a.eval, &config).map(|s| s.combined))
                    .collect::<CliResult<Vec<_>>>()?
            } else {
                a.scores.clone()
            };
            let w = fuse_weighted(&maps, &scores, a.transform.into()).map_err(Failure::from_core)?;
            if w.degenerate_weights {
                eprintln!("warning: weights degenerate, fell back to uniform");
            }
            summary.weights = Some(w.weights);
            w.map
        }
        FuseMode::Consensus => {
            summary.mode = "consensus";
            let c = fuse_consensus(&maps, a.k).map_err(Failure::from_core)?;
            summary.retained = Some(c.retained());
            c.map
        }
    };
    write_map(&a.out, &fused).compute()?;
    summary.label = fused.label().to_string();
    if let Some(oracle) = &oracle {
        summary.road = Some(score(&bundle, oracle.as_ref(), &fused, &a.eval, &config)?);
    }
    print_json(&summary)?;
    Ok(())
}

fn road(a: RoadArgs) -> CliResult<()> {
    let bundle = Bundle::load(&a.bundle).input()?;
    let map = match (&a.map, &a.map_file) {
        (Some(label), _) => bundle.map(label).input()?.clone(),
        (None, Some(path)) => read_map(path).with_context(|| format!("reading {}", path.display())).input()?,
        (None, None) => return Err(Failure::Input(anyhow!("pass --map or --map-file"))),
    };
    let config = a.eval.imputation()?;
    let oracle = bundle.oracle().input()?;
    let result = score(&bundle, oracle.as_ref(), &map, &a.eval, &config)?;
    let text = print_json(&result)?;
    if let Some(out) = a.out {
        write_atomic(&out, (text + "\n").as_bytes()).compute()?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    let bundle = Bundle::load(&a.bundle).input()?;
    let oracle = bundle.oracle().input()?;
    let settings = SweepSettings {
        k_grid: if a.full_range {
            full_grid()
        } else if a.grid.is_empty() {
            default_grid()
        } else {
            a.grid.clone()
        },
        percentiles: a.eval.percentiles.clone(),
        imputation: a.eval.imputation()?,
    };
    let (best, result) = match &a.single {
        Some(label) => adaptive_threshold_single(
            bundle.map(label).input()?,
            &bundle.image,
            bundle.class_id(),
            oracle.as_ref(),
            &settings,
            a.eval.noise_seed(),
        ),
        None => {
            let maps = valid_maps(bundle.select(&a.maps).input()?)?;
            adaptive_threshold(&maps, &bundle.image, bundle.class_id(), oracle.as_ref(), &settings, a.eval.noise_seed())
        }
    }
    .map_err(Failure::from_core)?;
    if let Some(path) = &a.map_out {
        write_map(path, &best.map).compute()?;
    }
    let text = print_json(&result)?;
    if let Some(out) = a.out {
        write_atomic(&out, (text + "\n").as_bytes()).compute()?;
    }
    Ok(())
}

/// Draws every report chart into `dir`. Failures are reported, not fatal.
fn emit_charts(dir: &Path, report: &CampaignReport, best: Option<(&ActivationMap, Option<&camforge_core::ImageTensor>)>) {
    let charts = dir.join("charts");
    let mut jobs: Vec<(&str, anyhow::Result<image::RgbImage>)> = vec![
        ("road_vs_k.png", Ok(chart::road_curve(&report.campaign.k_statistics))),
        ("best_k_histogram.png", Ok(chart::best_k_histogram(&report.campaign.k_statistics))),
    ];
    if let Some(cre) = &report.cre {
        jobs.push(("cre.png", Ok(chart::cre_bars(cre))));
    }
    if let Some((map, image)) = best {
        jobs.push(("best_metacam.png", chart::overlay(map, image, 0.5)));
    }
    if let Err(e) = std::fs::create_dir_all(&charts) {
        eprintln!("warning: cannot create {}: {e}", charts.display());
        return;
    }
    for (name, img) in jobs {
        if let Err(e) = img.and_then(|img| chart::save_png(&charts.join(name), &img)) {
            eprintln!("warning: chart {name} not written: {e:#}");
        }
    }
}

fn run_campaign_command(a: CampaignArgs) -> CliResult<()> {
    let campaign = Campaign::load(&a.manifest, a.groups.as_deref(), a.workers)?;
    let result = campaign.run()?;
    let best = campaign.best_metacam(&result);
    let report = CampaignReport::new(&campaign, result);
    write_tables(&a.out, &report).compute()?;
    if let Some(map) = &best {
        write_map(a.out.join("best_metacam.camm"), map).compute()?;
    }
    if !a.no_charts {
        emit_charts(&a.out, &report, best.as_ref().map(|m| (m, Some(&campaign.image))));
    }
    eprintln!(
        "{} experiments run, {} failed; max ROAD {} by {}",
        report.executed,
        report.failed,
        report.campaign.max_score.map_or("n/a".into(), |s| format!("{s:.4}")),
        report.campaign.max_set.map_or("n/a".into(), |s| s.code()),
    );
    if report.failed > 0 {
        return Err(Failure::Compute(anyhow!(
            "{} experiments failed; partial results written to {}",
            report.failed,
            a.out.display()
        )));
    }
    Ok(())
}

fn cre(a: CreArgs) -> CliResult<()> {
    let mut reports = Vec::new();
    for path in &a.reports {
        let report = read_report(path).input()?;
        let source = match a.source {
            Some(SourceArg::BestScore) => ScoreSource::BestScore,
            Some(SourceArg::SweepMean) => ScoreSource::SweepMean,
            None => report.score_source,
        };
        reports.push(campaign_cre(&report.campaign, source).map_err(Failure::from_core)?);
    }
    let total = aggregate_cre(&reports).map_err(Failure::from_core)?;
    print_json(&total)?;
    if let Some(dir) = a.out {
        write_cre(&dir, &total).compute()?;
        if let Err(e) = chart::save_png(&dir.join("cre.png"), &chart::cre_bars(&total)) {
            eprintln!("warning: chart cre.png not written: {e:#}");
        }
    }
    Ok(())
}

fn render(a: RenderArgs) -> CliResult<()> {
    if let Some(path) = &a.report {
        let report = read_report(path).input()?;
        std::fs::create_dir_all(&a.out).compute()?;
        emit_charts(&a.out, &report, None);
        return Ok(());
    }
    let map_path = a.map.as_ref().ok_or_else(|| Failure::Input(anyhow!("pass --map or --report")))?;
    let map = read_map(map_path).input()?;
    let image = a.image.as_ref().map(read_image).transpose().input()?;
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Failure::Input(anyhow!("--alpha must lie in [0, 1]")));
    }
    let img = chart::overlay(&map, image.as_ref(), a.alpha).input()?;
    chart::save_png(&a.out, &img).compute()
}
