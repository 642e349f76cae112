//! Exporter-facing interfaces: binary layouts and ONNX oracles.

use camforge_core::format::{decode_image, decode_map, encode_image, encode_map, read_image, read_map, write_map};
use camforge_core::oracle::{write_linear_classifier, LinearOracle, ModelOracle, OnnxOracle, RegionOracle};
use camforge_core::road::{road_score, ImputationConfig, DEFAULT_PERCENTILES};
use camforge_core::{ActivationMap, Error, ImageTensor};

fn le(v: u32) -> [u8; 4] {
    v.to_le_bytes()
}

#[test]
fn map_bytes_are_header_then_row_major_f32() {
    let map = ActivationMap::from_rows(&[&[0.5, 1.0, -2.0], &[0.0, 0.25, 3.0]]).unwrap();
    let mut expected = b"CAMM".to_vec();
    expected.extend(le(2));
    expected.extend(le(3));
    for v in [0.5f32, 1.0, -2.0, 0.0, 0.25, 3.0] {
        expected.extend(v.to_le_bytes());
    }
    assert_eq!(encode_map(&map), expected);
    assert_eq!(decode_map(&expected).unwrap().values(), map.values());
}

#[test]
fn image_bytes_are_planar() {
    // channel 0 then channel 1, each row-major
    let mut bytes = b"IMGT".to_vec();
    for d in [2u32, 1, 2] {
        bytes.extend(le(d));
    }
    for v in [1.0f32, 2.0, 10.0, 20.0] {
        bytes.extend(v.to_le_bytes());
    }
    let image = decode_image(&bytes).unwrap();
    assert_eq!((image.channels(), image.height(), image.width()), (2, 1, 2));
    assert_eq!(image.get(0, 0, 1), 2.0);
    assert_eq!(image.get(1, 0, 0), 10.0);
    assert_eq!(encode_image(&image), bytes);
}

#[test]
fn truncated_and_mislabelled_files_are_rejected() {
    let map = ActivationMap::from_rows(&[&[1.0, 2.0]]).unwrap();
    let bytes = encode_map(&map);
    assert!(matches!(decode_map(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_map(&extra), Err(Error::Format { .. })));
    let mut wrong = bytes;
    wrong[..4].copy_from_slice(b"IMGT");
    assert!(matches!(decode_map(&wrong), Err(Error::Format { .. })));
    assert!(decode_image(b"IMG").is_err());
}

#[test]
fn files_round_trip_and_label_from_stem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("GradCAM++.camm");
    let map = ActivationMap::from_rows(&[&[0.1, 0.2], &[0.3, 0.4]]).unwrap();
    write_map(&path, &map).unwrap();
    let back = read_map(&path).unwrap();
    assert_eq!(back.label(), "GradCAM++");
    for (a, b) in back.values().iter().zip(map.values()) {
        assert_eq!(*a, f64::from(*b as f32));
    }
    assert!(read_image(dir.path().join("missing.imgt")).is_err());
}

fn scene() -> (ImageTensor, RegionOracle) {
    let image = ImageTensor::from_fn(3, 12, 12, |ch, r, c| {
        if (3..7).contains(&r) && (2..6).contains(&c) {
            1.0
        } else {
            0.05 * ch as f32
        }
    })
    .unwrap();
    let region = RegionOracle {
        rows: [3, 7],
        cols: [2, 6],
        gain: 6.0,
        bias: -3.0,
    };
    (image, region)
}

#[test]
fn onnx_graph_matches_its_weights() {
    let (image, region) = scene();
    let linear = LinearOracle::from_region(&region, 3, 12, 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.onnx");
    write_linear_classifier(&path, &linear.weights, &linear.bias, (3, 12, 12)).unwrap();
    let onnx = OnnxOracle::load(&path, 3, 12, 12).unwrap();
    assert_eq!(onnx.class_count(), 2);
    let direct = region.predict(&image).unwrap();
    let graph = onnx.predict(&image).unwrap();
    for (a, b) in direct.iter().zip(&graph) {
        assert!((a - b).abs() < 1e-5, "{direct:?} vs {graph:?}");
    }
}

#[test]
fn road_through_onnx_agrees_with_the_closed_form_oracle() {
    let (image, region) = scene();
    let linear = LinearOracle::from_region(&region, 3, 12, 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.onnx");
    write_linear_classifier(&path, &linear.weights, &linear.bias, (3, 12, 12)).unwrap();
    let onnx = OnnxOracle::load(&path, 3, 12, 12).unwrap();
    let map = ActivationMap::new(12, 12, (0..144).map(|i| ((i * 37) % 144) as f64).collect()).unwrap();
    let config = ImputationConfig::default();
    let a = road_score(&image, &map, 0, &region, &DEFAULT_PERCENTILES, &config, 4).unwrap();
    let b = road_score(&image, &map, 0, &onnx, &DEFAULT_PERCENTILES, &config, 4).unwrap();
    assert!((a.combined - b.combined).abs() < 1e-5);
}

#[test]
fn onnx_rejects_garbage_and_wrong_shapes() {
    assert!(OnnxOracle::from_bytes(b"not a model", 1, 2, 2).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.onnx");
    write_linear_classifier(&path, &[vec![1.0; 4]], &[0.0], (1, 2, 2)).unwrap();
    let onnx = OnnxOracle::load(&path, 1, 2, 2).unwrap();
    let wrong = ImageTensor::new(1, 3, 3, vec![0.0; 9]).unwrap();
    assert!(onnx.predict(&wrong).is_err());
    assert!(write_linear_classifier(&path, &[vec![1.0; 3]], &[0.0], (1, 2, 2)).is_err());
}
