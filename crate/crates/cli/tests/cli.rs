mod common;

use std::collections::BTreeMap;

use camforge_cli::campaign::{read_report, CampaignReport};
use camforge_cli::REPORT_SCHEMA;
use camforge_core::cre::compute_cre;
use camforge_core::ensemble::CamSetId;
use camforge_core::format::read_map;
use camforge_core::map::normalize;
use camforge_core::oracle::{ConstantOracle, LinearOracle};
use camforge_core::road::{road_score, ImputationConfig, DEFAULT_PERCENTILES};
use camforge_core::seed;
use common::*;
use serde_json::json;

fn bundle_with(dir: &std::path::Path, oracle: OracleFixture) -> std::path::PathBuf {
    let maps = vec![
        random_map(SIZE, 1, "alpha"),
        random_map(SIZE, 2, "beta"),
        random_map(SIZE, 3, "gamma"),
        indicator(SIZE, TARGET, "target"),
    ];
    write_bundle(dir, &scene(SIZE), &maps, oracle, 0, &[])
}

#[test]
fn fuse_consensus_keeps_ceil_k_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::None);
    let out = tmp.path().join("meta.camm");
    let res = camforge(&[
        "fuse", "--mode", "consensus", "--k", "19", "--maps", "alpha,beta,gamma",
        "--bundle", path_str(&b), "--out", path_str(&out),
    ]);
    let summary = stdout_json(&res);
    let map = read_map(&out).unwrap();
    let nonzero = map.values().iter().filter(|&&v| v != 0.0).count();
    // ceil(19 * 256 / 100) in integers
    assert_eq!(nonzero, (19 * 256 + 99) / 100);
    assert_eq!(summary["retained"], json!(49));
    assert_eq!(summary["road"], json!(null));
}

#[test]
fn fuse_average_of_one_map_is_its_normalization() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::None);
    let out = tmp.path().join("avg.camm");
    let res = camforge(&[
        "fuse", "--mode", "average", "--maps", "beta", "--bundle", path_str(&b), "--out", path_str(&out),
    ]);
    assert!(res.status.success());
    let fused = read_map(&out).unwrap();
    let source = read_map(b.join("maps/beta.camm")).unwrap();
    let expected = normalize(&source).unwrap();
    for (a, e) in fused.values().iter().zip(expected.values()) {
        assert_eq!(*a, f64::from(*e as f32));
    }
}

#[test]
fn weighted_softmax_with_equal_scores_matches_average() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::None);
    let avg = tmp.path().join("avg.camm");
    let wtd = tmp.path().join("wtd.camm");
    let maps = "alpha,beta,gamma";
    assert!(camforge(&["fuse", "--mode", "average", "--maps", maps, "--bundle", path_str(&b), "--out", path_str(&avg)])
        .status
        .success());
    let res = camforge(&[
        "fuse", "--mode", "weighted", "--transform", "softmax", "--scores", "0.2,0.2,0.2", "--maps", maps,
        "--bundle", path_str(&b), "--out", path_str(&wtd),
    ]);
    let summary = stdout_json(&res);
    assert_eq!(summary["weights"].as_array().unwrap().len(), 3);
    let (a, w) = (read_map(&avg).unwrap(), read_map(&wtd).unwrap());
    for (x, y) in a.values().iter().zip(w.values()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn weighted_fusion_computes_scores_with_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::Json(region_spec()));
    let out = tmp.path().join("w.camm");
    let res = camforge(&[
        "fuse", "--mode", "weighted", "--maps", "alpha,target", "--bundle", path_str(&b), "--out", path_str(&out),
    ]);
    let summary = stdout_json(&res);
    let w: Vec<f64> = serde_json::from_value(summary["weights"].clone()).unwrap();
    // min-max of two scores puts all weight on the better map
    assert_eq!(w, vec![0.0, 1.0]);
    assert!(summary["road"]["combined"].as_f64().unwrap() > 0.3);
}

#[test]
fn road_with_constant_oracle_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = camforge_cli::bundle::OracleSpec::Constant {
        probabilities: vec![0.25, 0.75],
    };
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::Json(spec));
    let out = camforge(&["road", "--bundle", path_str(&b), "--map", "alpha"]);
    let score = stdout_json(&out);
    assert_eq!(score["combined"], json!(0.0));
    assert_eq!(score["percentiles"], json!([20.0, 40.0, 60.0, 80.0]));
    let _ = ConstantOracle::new(vec![0.25, 0.75]).unwrap();
}

#[test]
fn road_matches_library_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::Json(region_spec()));
    let out = camforge(&["road", "--bundle", path_str(&b), "--map", "gamma", "--seed", "42", "--sigma", "0.1"]);
    let score = stdout_json(&out);
    let config = ImputationConfig {
        noise_sigma: 0.1,
        ..ImputationConfig::default()
    };
    let map = read_map(b.join("maps/gamma.camm")).unwrap();
    let expected = road_score(
        &scene(SIZE),
        &map,
        0,
        &region_oracle(),
        &DEFAULT_PERCENTILES,
        &config,
        seed::derive(42, seed::stream::IMPUTATION, 0),
    )
    .unwrap();
    assert_eq!(score["combined"].as_f64().unwrap(), expected.combined);
    let lrp: Vec<f64> = serde_json::from_value(score["lrp_confidence"].clone()).unwrap();
    assert_eq!(lrp, expected.lrp_confidence);
}

#[test]
fn road_through_onnx_matches_region_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let linear = LinearOracle::from_region(&region_oracle(), 3, SIZE, SIZE);
    let onnx = bundle_with(&tmp.path().join("onnx"), OracleFixture::Onnx(linear));
    let json = bundle_with(&tmp.path().join("json"), OracleFixture::Json(region_spec()));
    let a = stdout_json(&camforge(&["road", "--bundle", path_str(&onnx), "--map", "target"]));
    let b = stdout_json(&camforge(&["road", "--bundle", path_str(&json), "--map", "target"]));
    let (a, b) = (a["combined"].as_f64().unwrap(), b["combined"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-5, "{a} vs {b}");
}

#[test]
fn road_without_oracle_exits_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::None);
    let out = camforge(&["road", "--bundle", path_str(&b), "--map", "alpha"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`oracle`"));
}

#[test]
fn input_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::Json(region_spec()));
    let missing = camforge(&["road", "--bundle", path_str(&tmp.path().join("nope")), "--map", "alpha"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_label = camforge(&["road", "--bundle", path_str(&b), "--map", "zeta"]);
    assert_eq!(bad_label.status.code(), Some(2));
    let bad_k = camforge(&["fuse", "--k", "0", "--bundle", path_str(&b), "--out", path_str(&tmp.path().join("x"))]);
    assert_eq!(bad_k.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_k.stderr).contains("retention"));
    std::fs::write(b.join("manifest.json"), "{ not json").unwrap();
    assert_eq!(camforge(&["road", "--bundle", path_str(&b), "--map", "alpha"]).status.code(), Some(2));
}

#[test]
fn sweep_reports_best_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::Json(region_spec()));
    let best = tmp.path().join("best.camm");
    let out = camforge(&[
        "sweep", "--bundle", path_str(&b), "--maps", "target,alpha", "--grid", "5,10,50", "--map-out", path_str(&best),
    ]);
    let sweep = stdout_json(&out);
    assert_eq!(sweep["k_values"], json!([5.0, 10.0, 50.0]));
    let k = sweep["best_k"].as_f64().unwrap();
    let map = read_map(&best).unwrap();
    let retained = map.values().iter().filter(|&&v| v != 0.0).count();
    assert!(retained <= (k as usize * 256).div_ceil(100));
    let single = stdout_json(&camforge(&["sweep", "--bundle", path_str(&b), "--single", "target", "--grid", "10,100"]));
    assert!(single["best_score"].as_f64().unwrap() >= single["scores"][1]["combined"].as_f64().unwrap());
}

#[test]
fn two_group_campaign_tables_and_cre() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = two_or_three_group_campaign(tmp.path(), 2, 3);
    let out = tmp.path().join("out");
    let res = camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let mut rdr = csv::Reader::from_path(out.join("experiments.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0].to_string()).collect::<Vec<_>>(), ["01", "10", "11"]);

    let report = read_report(&out.join("report.json")).unwrap();
    let scores: BTreeMap<String, f64> = report
        .campaign
        .completed()
        .map(|(e, s)| (e.id.code(), s.best_score))
        .collect();
    // hand CRE with a 3-element median
    let mut sorted: Vec<f64> = scores.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted[1];
    let cre_a = (scores["10"] - m) + (scores["11"] - m);
    let cre_b = (scores["01"] - m) + (scores["11"] - m);
    let cre = report.cre.as_ref().unwrap();
    assert_eq!(cre.residuals, vec![cre_a, cre_b]);
    assert!(cre_a > 0.0, "target group should help: {cre:?}");

    let mut rdr = csv::Reader::from_path(out.join("cre.csv")).unwrap();
    let cre_rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(&cre_rows[0][0], "A");
    assert_eq!(cre_rows[0][1].parse::<f64>().unwrap(), cre_a);

    for name in ["road_vs_k.png", "best_k_histogram.png", "cre.png", "best_metacam.png"] {
        assert!(out.join("charts").join(name).is_file(), "{name}");
    }
    assert!(out.join("best_metacam.camm").is_file());
    assert!(out.join("k_stats.csv").is_file() && out.join("sweeps.csv").is_file());
}

#[test]
fn report_validates_against_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = two_or_three_group_campaign(tmp.path(), 3, 1);
    let out = tmp.path().join("out");
    assert!(camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&out), "--no-charts"])
        .status
        .success());
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    if let Err(errors) = compiled.validate(&report) {
        let msgs: Vec<String> = errors.map(|e| format!("{e} at {}", e.instance_path)).collect();
        panic!("schema violations: {msgs:?}");
    }
    let mut broken = report.clone();
    broken["campaign"]["max_set"] = json!("12");
    assert!(!compiled.is_valid(&broken));
    assert!(!out.join("charts").exists());
}

#[test]
fn groups_override_grows_the_lattice() {
    let tmp = tempfile::tempdir().unwrap();
    let size = 6;
    let maps: Vec<_> = (0..7).map(|i| random_map(size, 100 + i, &format!("m{i}"))).collect();
    let spec = camforge_cli::bundle::OracleSpec::Constant {
        probabilities: vec![0.5, 0.5],
    };
    write_bundle(&tmp.path().join("b"), &scene(size), &maps, OracleFixture::Json(spec), 1, &[]);
    let manifest = tmp.path().join("campaign.json");
    write_json(
        &manifest,
        &json!({ "bundle": "b", "groups": { "A": ["m0"], "B": ["m1"] }, "k_grid": [50], "percentiles": [50], "seed": 1 }),
    );
    let groups = tmp.path().join("groups.json");
    let mut table = serde_json::Map::new();
    for i in 0..7 {
        table.insert(((b'A' + i as u8) as char).to_string(), json!([format!("b/maps/m{i}.camm")]));
    }
    table.insert("H".into(), json!(["@random"]));
    write_json(&groups, &serde_json::Value::Object(table));
    let out = tmp.path().join("out");
    let res = camforge(&[
        "campaign", "--manifest", path_str(&manifest), "--groups", path_str(&groups), "--out", path_str(&out), "--no-charts",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_report(&out.join("report.json")).unwrap();
    assert_eq!(report.campaign.experiments.len(), 256);
    assert_eq!(report.executed, 255);
    assert_eq!(report.campaign.groups[7].members, ["RandomCAM"]);
    assert!(report.campaign.inclusion_counts().iter().all(|&c| c == 128));
    // constant oracle: every score and every residual is zero
    assert!(report.cre.unwrap().residuals.iter().all(|&r| r == 0.0));
}

#[test]
fn invalid_maps_are_dropped_and_failures_exit_3_after_flushing() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = vec![indicator(SIZE, TARGET, "target")];
    write_bundle(&tmp.path().join("b"), &scene(SIZE), &maps, OracleFixture::Json(region_spec()), 0, &["ScoreCAM"]);
    let manifest = tmp.path().join("campaign.json");
    write_json(
        &manifest,
        &json!({ "bundle": "b", "groups": { "A": ["target"], "B": ["ScoreCAM"] }, "k_grid": [10, 20], "seed": 2 }),
    );
    let out = tmp.path().join("out");
    let res = camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("partial results"));
    let report: CampaignReport = read_report(&out.join("report.json")).unwrap();
    assert_eq!(report.failed, 1);
    let both = &report.campaign.experiments[3];
    assert_eq!(both.dropped, ["ScoreCAM"]);
    assert!(both.sweep.is_some());
    assert!(report.campaign.experiments[1].error.is_some());
}

#[test]
fn chart_failure_leaves_tables_intact() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = two_or_three_group_campaign(tmp.path(), 2, 3);
    let out = tmp.path().join("out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("charts"), "in the way").unwrap();
    let res = camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&out)]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
    assert!(read_report(&out.join("report.json")).is_ok());
    let clean = tmp.path().join("clean");
    assert!(camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&clean)]).status.success());
    assert_eq!(
        std::fs::read(out.join("report.json")).unwrap(),
        std::fs::read(clean.join("report.json")).unwrap()
    );
}

#[test]
fn worker_count_does_not_change_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = two_or_three_group_campaign(tmp.path(), 3, 8);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&a), "--workers", "1", "--no-charts"])
        .status
        .success());
    let res = std::process::Command::new(env!("CARGO_BIN_EXE_camforge"))
        .args(["campaign", "--manifest", path_str(&manifest), "--out", path_str(&b), "--no-charts"])
        .env("CAMFORGE_WORKERS", "3")
        .output()
        .unwrap();
    assert!(res.status.success());
    for f in ["report.json", "experiments.csv", "sweeps.csv", "k_stats.csv", "cre.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn cre_command_aggregates_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for seed in [1u64, 2] {
        let dir = tmp.path().join(format!("c{seed}"));
        std::fs::create_dir_all(&dir).unwrap();
        let manifest = two_or_three_group_campaign(&dir, 2, seed);
        let out = dir.join("out");
        assert!(camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&out), "--no-charts"])
            .status
            .success());
        reports.push(out.join("report.json"));
    }
    let cre_dir = tmp.path().join("cre");
    let total = stdout_json(&camforge(&[
        "cre", "--report", path_str(&reports[0]), "--report", path_str(&reports[1]), "--out", path_str(&cre_dir),
    ]));
    let parts: Vec<Vec<f64>> = reports
        .iter()
        .map(|p| read_report(p).unwrap().cre.unwrap().residuals)
        .collect();
    let residuals: Vec<f64> = serde_json::from_value(total["residuals"].clone()).unwrap();
    assert_eq!(residuals, vec![parts[0][0] + parts[1][0], parts[0][1] + parts[1][1]]);
    assert_eq!(total["median_score"], json!(null));
    assert_eq!(total["inclusion_counts"], json!([4, 4]));
    assert!(cre_dir.join("cre.png").is_file() && cre_dir.join("cre.csv").is_file());

    let mean = stdout_json(&camforge(&["cre", "--report", path_str(&reports[0]), "--source", "sweep-mean"]));
    let report = read_report(&reports[0]).unwrap();
    let results: Vec<(CamSetId, f64)> = report.campaign.completed().map(|(e, s)| (e.id, s.mean_score())).collect();
    let expected = compute_cre(&["A".to_string(), "B".to_string()], &results).unwrap();
    let got: Vec<f64> = serde_json::from_value(mean["residuals"].clone()).unwrap();
    assert_eq!(got, expected.residuals);
}

#[test]
fn render_overlay_and_report_charts() {
    let tmp = tempfile::tempdir().unwrap();
    let b = bundle_with(&tmp.path().join("b"), OracleFixture::None);
    let png = tmp.path().join("overlay.png");
    let res = camforge(&[
        "render", "--map", path_str(&b.join("maps/target.camm")), "--image", path_str(&b.join("image.imgt")),
        "--out", path_str(&png),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[1..4], b"PNG");

    let manifest = two_or_three_group_campaign(tmp.path(), 2, 5);
    let out = tmp.path().join("out");
    assert!(camforge(&["campaign", "--manifest", path_str(&manifest), "--out", path_str(&out), "--no-charts"])
        .status
        .success());
    let charts = tmp.path().join("charts");
    assert!(camforge(&["render", "--report", path_str(&out.join("report.json")), "--out", path_str(&charts)])
        .status
        .success());
    assert!(charts.join("charts/road_vs_k.png").is_file());
    assert_eq!(
        camforge(&["render", "--map", path_str(&png), "--out", path_str(&tmp.path().join("x.png"))]).status.code(),
        Some(2)
    );
}
