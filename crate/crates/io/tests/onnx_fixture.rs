//! Tiny ONNX graphs built in memory, run through `OnnxBackbone` and checked
//! against direct computation.

use std::collections::BTreeMap;
use std::path::Path;

use gmmd_core::backbone::{FeatureProvider, Family, Preprocessing};
use gmmd_core::gram::Layout;
use gmmd_core::ImageBuffer;
use gmmd_io::onnx::{BackboneSpec, OnnxBackbone, TokenLayout};
use prost::Message;
use tract_onnx::pb::{
    tensor_shape_proto::{dimension, Dimension},
    type_proto, AttributeProto, GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorProto,
    TensorShapeProto, TypeProto, ValueInfoProto,
};

const FLOAT: i32 = 1;
const INT64: i32 = 7;

/// An empty `dims` leaves the shape unspecified.
fn value_info(name: &str, dims: &[i64]) -> ValueInfoProto {
    let dim = dims
        .iter()
        .map(|&d| Dimension {
            value: Some(dimension::Value::DimValue(d)),
            ..Default::default()
        })
        .collect();
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            value: Some(type_proto::Value::TensorType(type_proto::Tensor {
                elem_type: FLOAT,
                shape: (!dims.is_empty()).then_some(TensorShapeProto { dim }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn floats(name: &str, dims: &[i64], data: Vec<f32>) -> TensorProto {
    TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: FLOAT,
        float_data: data,
        ..Default::default()
    }
}

fn ints_attr(name: &str, v: &[i64]) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        r#type: 7,
        ints: v.to_vec(),
        ..Default::default()
    }
}

fn int_attr(name: &str, v: i64) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        r#type: 2,
        i: v,
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attribute: Vec<AttributeProto>) -> NodeProto {
    NodeProto {
        op_type: op.into(),
        name: output.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        attribute,
        ..Default::default()
    }
}

fn model(graph: GraphProto) -> Vec<u8> {
    ModelProto {
        ir_version: 8,
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        graph: Some(graph),
        ..Default::default()
    }
    .encode_to_vec()
}

fn weights(n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|i| ((i * 37 % 23) as f32 - 11.0) * scale).collect()
}

fn image(w: usize, h: usize) -> ImageBuffer {
    let data = (0..w * h * 3).map(|i| ((i * 53 % 97) as f32) / 96.0).collect();
    ImageBuffer::new(w, h, data).unwrap()
}

/// Planar view of an interleaved image.
fn px(img: &ImageBuffer, c: usize, y: usize, x: usize) -> f64 {
    f64::from(img.data()[(y * img.width() + x) * 3 + c])
}

fn write_model(dir: &Path, bytes: &[u8]) -> std::path::PathBuf {
    let p = dir.join("net.onnx");
    std::fs::write(&p, bytes).unwrap();
    p
}

#[test]
fn conv_and_relu_layers_match_direct_convolution() {
    let w = weights(2 * 3 * 3 * 3, 0.05);
    let b = vec![0.1f32, -0.2];
    let graph = GraphProto {
        name: "conv".into(),
        node: vec![
            node(
                "Conv",
                &["input", "w", "b"],
                "conv_out",
                vec![ints_attr("kernel_shape", &[3, 3]), ints_attr("pads", &[1, 1, 1, 1])],
            ),
            node("Relu", &["conv_out"], "relu_out", vec![]),
        ],
        initializer: vec![floats("w", &[2, 3, 3, 3], w.clone()), floats("b", &[2], b.clone())],
        input: vec![value_info("input", &[1, 3, 4, 4])],
        output: vec![value_info("conv_out", &[]), value_info("relu_out", &[])],
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let spec = BackboneSpec {
        backbone_id: "conv-fixture".into(),
        family: Family::Cnn,
        model_file: write_model(dir.path(), &model(graph)),
        layer_outputs: BTreeMap::from([(1, "conv_out".to_string()), (2, "relu_out".to_string())]),
        preprocessing: Preprocessing::default(),
        tokens: None,
    };
    let net = OnnxBackbone::open(spec).unwrap();
    assert_eq!(net.layer_count(), 2);

    let img = image(4, 4);
    let mut expected = vec![0.0f64; 2 * 16];
    for o in 0..2 {
        for y in 0..4 {
            for x in 0..4 {
                let mut acc = f64::from(b[o]);
                for c in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = (y as i64 + ky as i64 - 1, x as i64 + kx as i64 - 1);
                            if (0..4).contains(&iy) && (0..4).contains(&ix) {
                                let wi = ((o * 3 + c) * 3 + ky) * 3 + kx;
                                acc += f64::from(w[wi]) * px(&img, c, iy as usize, ix as usize);
                            }
                        }
                    }
                }
                expected[o * 16 + y * 4 + x] = acc;
            }
        }
    }

    let acts = net.extract_layers(&img, &[1, 2]).unwrap();
    assert_eq!(
        acts[0].layout(),
        Layout::Cnn {
            channels: 2,
            height: 4,
            width: 4
        }
    );
    for (a, e) in acts[0].values().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-5, "{a} vs {e}");
    }
    for (a, e) in acts[1].values().iter().zip(&expected) {
        assert!((a - e.max(0.0)).abs() < 1e-5, "{a} vs relu {e}");
    }
    // Plans are reused; a second run is identical.
    assert_eq!(net.extract(1, &img).unwrap(), acts[0]);
    assert!(net.extract(3, &img).is_err());
}

/// Patchify conv, flatten to tokens, prepend a class token.
fn token_graph(dim: i64) -> GraphProto {
    GraphProto {
        name: "tokens".into(),
        node: vec![
            node(
                "Conv",
                &["input", "w"],
                "patch",
                vec![ints_attr("kernel_shape", &[2, 2]), ints_attr("strides", &[2, 2])],
            ),
            node("Reshape", &["patch", "flat_shape"], "grid", vec![]),
            node("Transpose", &["grid"], "tok", vec![ints_attr("perm", &[0, 2, 1])]),
            node("Concat", &["cls", "tok"], "seq", vec![int_attr("axis", 1)]),
        ],
        initializer: vec![
            floats("w", &[dim, 3, 2, 2], weights(dim as usize * 12, 0.1)),
            floats("cls", &[1, 1, dim], vec![9.0; dim as usize]),
            TensorProto {
                name: "flat_shape".into(),
                dims: vec![3],
                data_type: INT64,
                int64_data: vec![1, dim, -1],
                ..Default::default()
            },
        ],
        input: vec![value_info("input", &[1, 3, 4, 4])],
        output: vec![value_info("seq", &[])],
        ..Default::default()
    }
}

#[test]
fn token_layer_drops_prefix_and_checks_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_model(dir.path(), &model(token_graph(3)));
    let spec = |tokens| BackboneSpec {
        backbone_id: "tok-fixture".into(),
        family: Family::Tokens,
        model_file: path.clone(),
        layer_outputs: BTreeMap::from([(1, "seq".to_string())]),
        preprocessing: Preprocessing::default(),
        tokens,
    };
    let net = OnnxBackbone::open(spec(Some(TokenLayout {
        prefix_tokens: None,
        patch_size: Some(2),
    })))
    .unwrap();
    for (w, h) in [(4, 4), (6, 4)] {
        let act = net.extract(1, &image(w, h)).unwrap();
        let n = (w / 2) * (h / 2);
        assert_eq!(act.layout(), Layout::Tokens { count: n, dim: 3 });
        // The class token (all 9.0) is gone.
        assert!(act.values().iter().all(|&v| v != 9.0));
    }

    // A wrong patch size disagrees with the token count.
    let wrong = OnnxBackbone::open(spec(Some(TokenLayout {
        prefix_tokens: Some(1),
        patch_size: Some(4),
    })))
    .unwrap();
    assert!(wrong.extract(1, &image(4, 4)).is_err());
}

#[test]
fn unknown_output_name_fails_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BackboneSpec {
        backbone_id: "tok-fixture".into(),
        family: Family::Tokens,
        model_file: write_model(dir.path(), &model(token_graph(3))),
        layer_outputs: BTreeMap::from([(1, "no_such_node".to_string())]),
        preprocessing: Preprocessing::default(),
        tokens: None,
    };
    let e = OnnxBackbone::open(spec).unwrap_err();
    assert!(e.to_string().contains("no_such_node"));
}
