#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camforge_cli::bundle::OracleSpec;
use camforge_core::format::{write_image, write_map};
use camforge_core::oracle::{write_linear_classifier, LinearOracle, RegionOracle};
use camforge_core::{ActivationMap, ImageTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const SIZE: usize = 16;

/// Block the oracle looks at.
pub const TARGET: ([usize; 2], [usize; 2]) = ([6, 10], [3, 7]);
/// Equally bright block the oracle ignores.
pub const DISTRACTOR: ([usize; 2], [usize; 2]) = ([6, 10], [10, 14]);

pub fn region_oracle() -> RegionOracle {
    RegionOracle {
        rows: TARGET.0,
        cols: TARGET.1,
        gain: 8.0,
        bias: -4.0,
    }
}

pub fn region_spec() -> OracleSpec {
    let r = region_oracle();
    OracleSpec::Region {
        rows: r.rows,
        cols: r.cols,
        gain: r.gain,
        bias: r.bias,
    }
}

fn inside((rows, cols): ([usize; 2], [usize; 2]), r: usize, c: usize) -> bool {
    (rows[0]..rows[1]).contains(&r) && (cols[0]..cols[1]).contains(&c)
}

/// Black image with the target and distractor blocks lit.
pub fn scene(size: usize) -> ImageTensor {
    ImageTensor::from_fn(3, size, size, |_, r, c| {
        if inside(TARGET, r, c) || inside(DISTRACTOR, r, c) {
            1.0
        } else {
            0.0
        }
    })
    .unwrap()
}

pub fn indicator(size: usize, block: ([usize; 2], [usize; 2]), label: &str) -> ActivationMap {
    let values = (0..size * size)
        .map(|i| f64::from(u8::from(inside(block, i / size, i % size))))
        .collect();
    ActivationMap::new(size, size, values).unwrap().with_label(label)
}

/// Smooth-ish random map with strictly positive values.
pub fn random_map(size: usize, seed: u64, label: &str) -> ActivationMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..size * size).map(|_| 0.05 + rng.random::<f64>()).collect();
    ActivationMap::new(size, size, values).unwrap().with_label(label)
}

pub enum OracleFixture {
    None,
    Json(OracleSpec),
    Onnx(LinearOracle),
}

/// Writes `manifest.json`, `image.imgt`, `maps/*.camm` and the oracle into `dir`.
pub fn write_bundle(
    dir: &Path,
    image: &ImageTensor,
    maps: &[ActivationMap],
    oracle: OracleFixture,
    class_id: usize,
    invalid: &[&str],
) -> PathBuf {
    std::fs::create_dir_all(dir.join("maps")).unwrap();
    write_image(dir.join("image.imgt"), image).unwrap();
    let mut table = BTreeMap::new();
    for m in maps {
        let rel = format!("maps/{}.camm", m.label());
        write_map(dir.join(&rel), m).unwrap();
        table.insert(m.label().to_string(), rel);
    }
    let mut manifest = json!({
        "image": "image.imgt",
        "class_id": class_id,
        "model": "synthetic",
        "preprocessing": { "resize": image.height(), "crop": image.height() },
        "maps": table,
        "invalid": invalid,
    });
    match oracle {
        OracleFixture::None => {}
        OracleFixture::Json(spec) => {
            std::fs::write(dir.join("oracle.json"), serde_json::to_string(&spec).unwrap()).unwrap();
            manifest["oracle"] = json!("oracle.json");
        }
        OracleFixture::Onnx(linear) => {
            let shape = (image.channels(), image.height(), image.width());
            write_linear_classifier(dir.join("model.onnx"), &linear.weights, &linear.bias, shape).unwrap();
            manifest["oracle"] = json!("model.onnx");
        }
    }
    write_json(&dir.join("manifest.json"), &manifest);
    dir.to_path_buf()
}

pub fn write_json(path: &Path, value: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

pub fn camforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camforge"))
        .args(args)
        .env_remove("CAMFORGE_WORKERS")
        .output()
        .expect("binary runs")
}

pub fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Bundle whose maps are the target, the distractor and a random map, plus a
/// campaign manifest with one group per map.
pub fn two_or_three_group_campaign(dir: &Path, groups: usize, seed: u64) -> PathBuf {
    let maps = vec![
        indicator(SIZE, TARGET, "target"),
        indicator(SIZE, DISTRACTOR, "distractor"),
        random_map(SIZE, 11, "noise"),
    ];
    write_bundle(&dir.join("bundle"), &scene(SIZE), &maps, OracleFixture::Json(region_spec()), 0, &[]);
    let names = ["target", "distractor", "noise"];
    let table: BTreeMap<String, Vec<&str>> = (0..groups)
        .map(|g| (((b'A' + g as u8) as char).to_string(), vec![names[g]]))
        .collect();
    let manifest = dir.join("campaign.json");
    write_json(
        &manifest,
        &json!({
            "bundle": "bundle",
            "groups": table,
            "k_grid": [10, 20, 30],
            "percentiles": [20, 40, 60, 80],
            "sigma": 0.05,
            "seed": seed,
            "workers": 2,
        }),
    );
    manifest
}
