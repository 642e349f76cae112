//! ONNX-backed oracle, evaluated with tract.
//!
//! The graph takes one `1 x C x H x W` float input named `input` and produces
//! a `1 x classes` logit vector; softmax is applied here.

use std::path::Path;
use std::sync::Arc;

use prost::Message;
use tract_onnx::pb;
use tract_onnx::prelude::*;

use super::{softmax, ModelOracle};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

fn oracle_err(e: impl std::fmt::Display) -> Error {
    Error::Oracle(e.to_string())
}

pub struct OnnxOracle {
    plan: Arc<TypedRunnableModel>,
    shape: (usize, usize, usize),
    class_count: usize,
}

impl std::fmt::Debug for OnnxOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxOracle")
            .field("shape", &self.shape)
            .field("class_count", &self.class_count)
            .finish()
    }
}

impl OnnxOracle {
    /// Loads a graph and fixes its input to `1 x channels x height x width`.
    pub fn load(path: impl AsRef<Path>, channels: usize, height: usize, width: usize) -> Result<Self> {
        let path = path.as_ref();
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| Error::Oracle(format!("cannot load {}: {e:#}", path.display())))?;
        Self::from_inference_model(model, channels, height, width)
    }

    pub fn from_bytes(bytes: &[u8], channels: usize, height: usize, width: usize) -> Result<Self> {
        let model = tract_onnx::onnx()
            .model_for_read(&mut std::io::Cursor::new(bytes))
            .map_err(|e| Error::Oracle(format!("cannot parse graph: {e:#}")))?;
        Self::from_inference_model(model, channels, height, width)
    }

    fn from_inference_model(
        model: InferenceModel,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let inputs = model.input_outlets().map_err(oracle_err)?;
        if inputs.len() != 1 {
            return Err(Error::Oracle(format!("graph has {} inputs, expected 1", inputs.len())));
        }
        let name = &model.node(inputs[0].node).name;
        if name != "input" {
            return Err(Error::Oracle(format!("graph input is named {name:?}, expected \"input\"")));
        }
        let typed = model
            .with_input_fact(0, f32::fact([1, channels, height, width]).into())
            .and_then(|m| m.into_optimized())
            .map_err(|e| Error::Oracle(format!("cannot prepare graph: {e:#}")))?;
        let out = typed.output_fact(0).map_err(oracle_err)?;
        let dims: Vec<usize> = out
            .shape
            .as_concrete()
            .ok_or_else(|| Error::Oracle("output shape is not concrete".into()))?
            .to_vec();
        let class_count = match dims.as_slice() {
            [1, n] | [n] => *n,
            other => {
                return Err(Error::Oracle(format!(
                    "output shape {other:?}, expected 1 x classes"
                )))
            }
        };
        let plan = typed.into_runnable().map_err(oracle_err)?;
        Ok(Self {
            plan,
            shape: (channels, height, width),
            class_count,
        })
    }

    pub fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let (c, h, w) = self.shape;
        if (image.channels(), image.height(), image.width()) != (c, h, w) {
            return Err(Error::Oracle(format!(
                "graph expects a {c}x{h}x{w} image, got {}x{}x{}",
                image.channels(),
                image.height(),
                image.width()
            )));
        }
        let input = Tensor::from_shape(&[1, c, h, w], image.values()).map_err(oracle_err)?;
        let outputs = self.plan.run(tvec!(input.into())).map_err(oracle_err)?;
        let view = outputs[0].to_plain_array_view::<f32>().map_err(oracle_err)?;
        Ok(view.iter().map(|&v| f64::from(v)).collect())
    }
}

impl ModelOracle for OnnxOracle {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn predict(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(image)?))
    }
}

fn value_info(name: &str, dims: &[i64]) -> pb::ValueInfoProto {
    use pb::tensor_shape_proto::{dimension::Value, Dimension};
    pb::ValueInfoProto {
        name: name.into(),
        r#type: Some(pb::TypeProto {
            value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
                elem_type: pb::tensor_proto::DataType::Float as i32,
                shape: Some(pb::TensorShapeProto {
                    dim: dims
                        .iter()
                        .map(|&d| Dimension {
                            value: Some(Value::DimValue(d)),
                            ..Default::default()
                        })
                        .collect(),
                }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn float_tensor(name: &str, dims: &[i64], data: Vec<f32>) -> pb::TensorProto {
    pb::TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: pb::tensor_proto::DataType::Float as i32,
        float_data: data,
        ..Default::default()
    }
}

fn int_attr(name: &str, value: i64) -> pb::AttributeProto {
    pb::AttributeProto {
        name: name.into(),
        r#type: pb::attribute_proto::AttributeType::Int as i32,
        i: value,
        ..Default::default()
    }
}

/// Writes `logits = W . flatten(input) + b` as an opset-13 ONNX graph.
///
/// `weights` holds one row of `C * H * W` values per class. Useful for
/// smoke-testing bundles without a trained network.
pub fn write_linear_classifier(
    path: impl AsRef<Path>,
    weights: &[Vec<f32>],
    bias: &[f32],
    shape: (usize, usize, usize),
) -> Result<()> {
    let (c, h, w) = shape;
    let features = c * h * w;
    if weights.is_empty() || weights.len() != bias.len() || weights.iter().any(|r| r.len() != features) {
        return Err(Error::InvalidShape("weights must be classes x (C*H*W) and match bias".into()));
    }
    let classes = weights.len() as i64;
    let graph = pb::GraphProto {
        name: "linear".into(),
        node: vec![
            pb::NodeProto {
                name: "flatten".into(),
                op_type: "Flatten".into(),
                input: vec!["input".into()],
                output: vec!["flat".into()],
                attribute: vec![int_attr("axis", 1)],
                ..Default::default()
            },
            pb::NodeProto {
                name: "gemm".into(),
                op_type: "Gemm".into(),
                input: vec!["flat".into(), "weight".into(), "bias".into()],
                output: vec!["logits".into()],
                attribute: vec![int_attr("transB", 1)],
                ..Default::default()
            },
        ],
        initializer: vec![
            float_tensor("weight", &[classes, features as i64], weights.concat()),
            float_tensor("bias", &[classes], bias.to_vec()),
        ],
        input: vec![value_info("input", &[1, c as i64, h as i64, w as i64])],
        output: vec![value_info("logits", &[1, classes])],
        ..Default::default()
    };
    let model = pb::ModelProto {
        ir_version: 7,
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "camforge".into(),
        graph: Some(graph),
        ..Default::default()
    };
    std::fs::write(path, model.encode_to_vec())?;
    Ok(())
}
