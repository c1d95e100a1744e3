use std::collections::BTreeMap;

use nbend_core::bendconfig::*;
use nbend_core::clustering::ClusterModel;
use nbend_core::generator::{LayerDescriptor, ModelDescriptor};
use nbend_core::transforms::{Axis, TransformKind};
use nbend_core::Error;
use proptest::prelude::*;

const FIG2: &str = "transforms: [{layer: 5, transform: scale, params: [0.6, 0.6], layer_type: cluster, layer_type_param: 2}]";

fn config_error(text: &str) -> (usize, String, String) {
    match parse_config(text).unwrap_err() {
        Error::Config { line, field, msg, .. } => (line, field, msg),
        other => panic!("expected a config error, got {other}"),
    }
}

fn cluster_model(layer: usize, assignment: Vec<usize>, k: usize) -> ClusterModel {
    ClusterModel {
        layer,
        k,
        centroids: vec![vec![0.0; 10]; k],
        assignment,
        inertia: 0.0,
        seed: 0,
    }
}

fn one_layer(features: usize) -> ModelDescriptor {
    ModelDescriptor {
        latent_dim: 8,
        output_channels: 3,
        layers: vec![LayerDescriptor::new(1, 8, features, 3)],
    }
}

#[test]
fn figure_two_record() {
    let c = parse_config(FIG2).unwrap();
    assert_eq!(
        c.transforms,
        vec![TransformSpec {
            layer: 5,
            transform: TransformKind::Scale { kx: 0.6, ky: 0.6 },
            selector: FeatureSelector::Cluster(2),
            line: 1,
        }]
    );
}

#[test]
fn empty_list() {
    let c = parse_config("transforms: []").unwrap();
    assert!(c.transforms.is_empty());
    assert!(c.resolve(&ModelDescriptor::toy(), None).unwrap().is_empty());
}

#[test]
fn every_kind_parses() {
    let text = "seed: 12
transforms:
  - {layer: 1, transform: ablate, params: [], layer_type: all, layer_type_param: null}
  - {layer: 1, transform: invert, params: [], layer_type: all, layer_type_param: null}
  - {layer: 1, transform: scalar_multiply, params: [2.5], layer_type: random, layer_type_param: 0.25}
  - {layer: 2, transform: binary_threshold, params: [0.5], layer_type: all, layer_type_param: null}
  - {layer: 2, transform: reflect, params: [vertical], layer_type: all, layer_type_param: null}
  - {layer: 2, transform: translate, params: [3, -1.5], layer_type: all, layer_type_param: null}
  - {layer: 3, transform: rotate, params: [45], layer_type: all, layer_type_param: null}
  - {layer: 3, transform: erode, params: [2], layer_type: all, layer_type_param: null}
  - {layer: 4, transform: dilate, params: [2], layer_type: cluster, layer_type_param: 0}
";
    let c = parse_config(text).unwrap();
    assert_eq!(c.seed, 12);
    let kinds: Vec<TransformKind> = c.transforms.iter().map(|t| t.transform.clone()).collect();
    assert_eq!(
        kinds,
        vec![
            TransformKind::Ablate,
            TransformKind::Invert,
            TransformKind::ScalarMultiply { factor: 2.5 },
            TransformKind::BinaryThreshold { threshold: 0.5 },
            TransformKind::Reflect { axis: Axis::Vertical },
            TransformKind::Translate { dx: 3.0, dy: -1.5 },
            TransformKind::Rotate { degrees: 45.0 },
            TransformKind::Erode { radius: 2 },
            TransformKind::Dilate { radius: 2 },
        ]
    );
    let lines: Vec<usize> = c.transforms.iter().map(|t| t.line).collect();
    assert_eq!(lines, (3..=11).collect::<Vec<_>>());
}

#[test]
fn parse_errors_cite_line_and_field() {
    let text = "transforms:\n  - layer: 2\n    transform: rotate\n    params: [45, 90]\n    layer_type: all\n    layer_type_param: null\n";
    let (line, field, msg) = config_error(text);
    assert_eq!((line, field.as_str()), (4, "params"));
    assert!(msg.contains("rotate expects 1 param"), "{msg}");

    let (line, field, msg) = config_error("transforms:\n- {layer: 1, transform: twist, params: [], layer_type: all, layer_type_param: null}\n");
    assert_eq!((line, field.as_str()), (2, "transform"));
    assert!(msg.contains("unknown transform `twist`"));

    let (line, field, _) = config_error("transforms:\n- {layer: 1, transform: invert, params: [], layer_type: all}\n");
    assert_eq!((line, field.as_str()), (2, "layer_type_param"));

    let (line, field, msg) = config_error(
        "transforms:\n- layer: 1\n  transform: invert\n  params: []\n  layer_type: all\n  layer_type_param: null\n  colour: red\n",
    );
    assert_eq!((line, field.as_str()), (7, "colour"));
    assert!(msg.contains("unknown item"));

    let (line, _, msg) = config_error("transforms:\n  - [1, 2\n");
    assert!(msg.contains("malformed YAML"), "{msg}");
    assert!(line >= 2);

    let (_, field, _) = config_error("transform: []\n");
    assert_eq!(field, "transform");
    let (_, field, _) = config_error("seed: 3\n");
    assert_eq!(field, "transforms");
    let (_, field, _) = config_error("transforms:\n- {layer: 0, transform: invert, params: [], layer_type: all, layer_type_param: null}");
    assert_eq!(field, "layer");
    let (_, field, _) = config_error("transforms:\n- {layer: 1, transform: erode, params: [1.5], layer_type: all, layer_type_param: null}");
    assert_eq!(field, "params");
    let (_, field, _) = config_error("transforms:\n- {layer: 1, transform: scale, params: [0, 1], layer_type: all, layer_type_param: null}");
    assert_eq!(field, "params");
    let (_, field, _) = config_error("transforms:\n- {layer: 1, transform: invert, params: [], layer_type: some, layer_type_param: null}");
    assert_eq!(field, "layer_type");
}

#[test]
fn validation_messages() {
    let toy = ModelDescriptor::toy();
    let c = parse_config("transforms:\n- {layer: 99, transform: invert, params: [], layer_type: all, layer_type_param: null}").unwrap();
    let err = c.validate_against(&toy, None).unwrap_err();
    assert!(err.to_string().contains("layer 99 not in model (1..4)"), "{err}");
    match err {
        Error::Validation { position, line, .. } => assert_eq!((position, line), (1, 2)),
        other => panic!("{other}"),
    }

    let c = parse_config(FIG2).unwrap();
    let sg = ModelDescriptor::stylegan2_1024();
    assert!(c.validate_against(&sg, None).unwrap_err().to_string().contains("cluster model required"));

    let c = parse_config("transforms:\n- {layer: 1, transform: invert, params: [], layer_type: cluster, layer_type_param: 7}").unwrap();
    let models = BTreeMap::from([(1, cluster_model(1, (0..512).map(|f| f % 5).collect(), 5))]);
    let err = c.validate_against(&sg, Some(&models)).unwrap_err();
    assert!(err.to_string().contains("cluster 7 out of range: layer 1 has 5 clusters"), "{err}");
    let ok = parse_config("transforms:\n- {layer: 1, transform: invert, params: [], layer_type: cluster, layer_type_param: 4}").unwrap();
    ok.validate_against(&sg, Some(&models)).unwrap();

    let c = parse_config("transforms:\n- {layer: 1, transform: invert, params: [], layer_type: random, layer_type_param: 1.5}").unwrap();
    assert!(c.validate_against(&toy, None).unwrap_err().to_string().contains("outside [0, 1]"));
}

#[test]
fn selectors_resolve() {
    let toy = ModelDescriptor::toy();
    let mut c = parse_config("transforms:\n- {layer: 2, transform: invert, params: [], layer_type: all, layer_type_param: null}").unwrap();
    assert_eq!(c.resolve(&toy, None).unwrap()[0].features, (0..16).collect::<Vec<_>>());

    c.transforms[0].selector = FeatureSelector::Random(0.0);
    assert!(c.resolve(&toy, None).unwrap()[0].features.is_empty());
    c.transforms[0].selector = FeatureSelector::Random(1.0);
    assert_eq!(c.resolve(&toy, None).unwrap()[0].features, (0..16).collect::<Vec<_>>());

    c.transforms[0].selector = FeatureSelector::Cluster(1);
    let models = BTreeMap::from([(2, cluster_model(2, (0..16).map(|f| f % 3).collect(), 3))]);
    assert_eq!(c.resolve(&toy, Some(&models)).unwrap()[0].features, vec![1, 4, 7, 10, 13]);
}

#[test]
fn random_selection_statistics() {
    let d = one_layer(512);
    let mut c = BendConfig {
        seed: 0,
        transforms: vec![TransformSpec::new(1, TransformKind::Invert, FeatureSelector::Random(0.5))],
    };
    let first = c.resolve(&d, None).unwrap();
    assert_eq!(first, c.resolve(&d, None).unwrap());

    let sizes: Vec<f64> = (0..1000)
        .map(|s| {
            c.seed = s;
            c.resolve(&d, None).unwrap()[0].features.len() as f64
        })
        .collect();
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let sigma = (512.0f64 * 0.25).sqrt();
    assert!((mean - 256.0).abs() < 3.0 * sigma, "mean {mean}");
    // The mean of 1000 draws is much tighter than one draw.
    assert!((mean - 256.0).abs() < 3.0 * sigma / 1000f64.sqrt(), "mean {mean}");
    let within = sizes.iter().filter(|&&s| (s - 256.0).abs() <= 3.0 * sigma).count();
    assert!(within >= 990, "{within}");
}

#[test]
fn random_selection_depends_on_position() {
    let d = one_layer(64);
    let spec = TransformSpec::new(1, TransformKind::Invert, FeatureSelector::Random(0.5));
    let c = BendConfig {
        seed: 4,
        transforms: vec![spec.clone(), spec],
    };
    let hooks = c.resolve(&d, None).unwrap();
    assert_ne!(hooks[0].features, hooks[1].features);
}

#[test]
fn hooks_follow_file_order() {
    let text = "transforms:
  - {layer: 3, transform: binary_threshold, params: [0.3], layer_type: all, layer_type_param: null}
  - {layer: 1, transform: ablate, params: [], layer_type: all, layer_type_param: null}
  - {layer: 3, transform: invert, params: [], layer_type: all, layer_type_param: null}
";
    let hooks = parse_config(text).unwrap().resolve(&ModelDescriptor::toy(), None).unwrap();
    let order: Vec<(usize, &str)> = hooks.iter().map(|h| (h.layer, h.transform.name())).collect();
    assert_eq!(order, vec![(3, "binary_threshold"), (1, "ablate"), (3, "invert")]);
}

fn kind_strategy() -> impl Strategy<Value = TransformKind> {
    let num = -100.0f64..100.0;
    prop_oneof![
        Just(TransformKind::Ablate),
        Just(TransformKind::Invert),
        num.clone().prop_map(|factor| TransformKind::ScalarMultiply { factor }),
        num.clone().prop_map(|threshold| TransformKind::BinaryThreshold { threshold }),
        any::<bool>().prop_map(|v| TransformKind::Reflect { axis: if v { Axis::Vertical } else { Axis::Horizontal } }),
        (num.clone(), num.clone()).prop_map(|(dx, dy)| TransformKind::Translate { dx, dy }),
        (0.01f64..5.0, 0.01f64..5.0).prop_map(|(kx, ky)| TransformKind::Scale { kx, ky }),
        num.prop_map(|degrees| TransformKind::Rotate { degrees }),
        (0u32..6).prop_map(|radius| TransformKind::Erode { radius }),
        (0u32..6).prop_map(|radius| TransformKind::Dilate { radius }),
    ]
}

fn selector_strategy() -> impl Strategy<Value = FeatureSelector> {
    prop_oneof![
        Just(FeatureSelector::All),
        (0usize..8).prop_map(FeatureSelector::Cluster),
        (0.0f64..=1.0).prop_map(FeatureSelector::Random),
    ]
}

proptest! {
    #[test]
    fn canonical_form_round_trips(
        seed in any::<u32>(),
        specs in proptest::collection::vec((1usize..20, kind_strategy(), selector_strategy()), 0..6),
    ) {
        let config = BendConfig {
            seed: seed as u64,
            transforms: specs.into_iter().map(|(l, k, s)| TransformSpec::new(l, k, s)).collect(),
        };
        let text = config.to_yaml();
        let parsed = parse_config(&text).unwrap();
        prop_assert_eq!(parsed.to_yaml(), text.clone());
        prop_assert_eq!(parsed.seed, config.seed);
        for (a, b) in parsed.transforms.iter().zip(&config.transforms) {
            prop_assert_eq!((a.layer, &a.transform, &a.selector), (b.layer, &b.transform, &b.selector));
        }
        prop_assert_eq!(parse_config(&parsed.to_yaml()).unwrap(), parsed);
    }
}
