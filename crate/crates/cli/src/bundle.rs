//! Experiment bundles: a manifest tying an image, a class, an oracle and a
//! table of maps together.
//!
//! ```json
//! {
//!   "image": "image.imgt",
//!   "class_id": 281,
//!   "oracle": "model.onnx",
//!   "model": "DenseNet161",
//!   "preprocessing": { "resize": 256, "crop": 224 },
//!   "maps": { "GradCAM": "maps/GradCAM.camm" },
//!   "invalid": ["ScoreCAM"]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use camforge_core::format::{read_image, read_map};
use camforge_core::oracle::{ConstantOracle, LinearOracle, ModelOracle, OnnxOracle, RegionOracle};
use camforge_core::{ActivationMap, ImageTensor, Normalization};
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub image: PathBuf,
    pub class_id: usize,
    #[serde(default)]
    pub oracle: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub preprocessing: Option<serde_json::Value>,
    pub maps: BTreeMap<String, PathBuf>,
    /// Methods the exporter could not produce.
    #[serde(default)]
    pub invalid: Vec<String>,
}

/// Synthetic oracle descriptors accepted in place of an ONNX graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleSpec {
    Constant { probabilities: Vec<f64> },
    Region {
        rows: [usize; 2],
        cols: [usize; 2],
        gain: f64,
        bias: f64,
    },
    Linear { weights: Vec<Vec<f32>>, bias: Vec<f32> },
}

impl OracleSpec {
    pub fn build(self) -> anyhow::Result<Arc<dyn ModelOracle>> {
        Ok(match self {
            OracleSpec::Constant { probabilities } => Arc::new(ConstantOracle::new(probabilities)?),
            OracleSpec::Region { rows, cols, gain, bias } => Arc::new(RegionOracle { rows, cols, gain, bias }),
            OracleSpec::Linear { weights, bias } => Arc::new(LinearOracle { weights, bias }),
        })
    }
}

/// Loads an oracle for images shaped like `image`.
///
/// `.onnx` files go through tract; `.json` files hold an [`OracleSpec`].
pub fn load_oracle(path: &Path, image: &ImageTensor) -> anyhow::Result<Arc<dyn ModelOracle>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("onnx") => {
            let oracle = OnnxOracle::load(path, image.channels(), image.height(), image.width())?;
            Ok(Arc::new(oracle))
        }
        Some("json") => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec: OracleSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing oracle descriptor {}", path.display()))?;
            spec.build()
        }
        _ => bail!("unsupported oracle file {}: expected .onnx or .json", path.display()),
    }
}

/// `mean`/`std` arrays of the preprocessing record, when present.
fn preprocessing_normalization(record: &serde_json::Value) -> Option<Normalization> {
    let field = |name: &str| -> Option<Vec<f64>> { serde_json::from_value(record.get(name)?.clone()).ok() };
    Some(Normalization {
        mean: field("mean")?,
        std: field("std")?,
    })
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Accepts either a bundle directory or a manifest file.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub struct Bundle {
    pub manifest_path: PathBuf,
    pub manifest: BundleManifest,
    pub image: ImageTensor,
    /// Every listed map, keyed by manifest label.
    pub maps: BTreeMap<String, ActivationMap>,
    oracle_path: Option<PathBuf>,
}

impl Bundle {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let manifest_path = manifest_path(path);
        let text = std::fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading bundle manifest {}", manifest_path.display()))?;
        let manifest: BundleManifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing bundle manifest {}", manifest_path.display()))?;
        let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let image_path = resolve(&base, &manifest.image);
        let mut image = read_image(&image_path).with_context(|| format!("reading image {}", image_path.display()))?;
        if let Some(norm) = manifest.preprocessing.as_ref().and_then(preprocessing_normalization) {
            image = image.with_normalization(norm)?;
        }
        let mut maps = BTreeMap::new();
        for (label, rel) in &manifest.maps {
            let p = resolve(&base, rel);
            let map = read_map(&p).with_context(|| format!("reading map {label} from {}", p.display()))?;
            if map.dims() != image.spatial_dims() {
                bail!(
                    "map {label} is {:?} but the image is {:?}",
                    map.dims(),
                    image.spatial_dims()
                );
            }
            maps.insert(label.clone(), map.with_label(label.clone()));
        }
        let oracle_path = manifest.oracle.as_ref().map(|p| resolve(&base, p));
        Ok(Self {
            manifest_path,
            manifest,
            image,
            maps,
            oracle_path,
        })
    }

    pub fn class_id(&self) -> usize {
        self.manifest.class_id
    }

    /// Loads the oracle and checks the class id against it.
    pub fn oracle(&self) -> anyhow::Result<Arc<dyn ModelOracle>> {
        let Some(path) = &self.oracle_path else {
            bail!("bundle manifest {} has no `oracle` field", self.manifest_path.display());
        };
        let oracle = load_oracle(path, &self.image)?;
        if self.class_id() >= oracle.class_count() {
            bail!(
                "class_id {} out of range for an oracle with {} classes",
                self.class_id(),
                oracle.class_count()
            );
        }
        Ok(oracle)
    }

    pub fn has_oracle(&self) -> bool {
        self.oracle_path.is_some()
    }

    pub fn map(&self, label: &str) -> anyhow::Result<&ActivationMap> {
        self.maps.get(label).with_context(|| format!("bundle has no map labelled {label:?}"))
    }

    /// The named maps, or every map when `labels` is empty.
    pub fn select(&self, labels: &[String]) -> anyhow::Result<Vec<ActivationMap>> {
        if labels.is_empty() {
            return Ok(self.maps.values().cloned().collect());
        }
        labels.iter().map(|l| self.map(l).cloned()).collect()
    }
}
