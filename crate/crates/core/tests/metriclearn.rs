use nbend_core::generator::{dump_activations, load_external_dump, ActivationDump, DumpSet, LayerDescriptor, ModelDescriptor, ToyGenerator};
use nbend_core::metriclearn::*;
use nbend_core::optim::OptimizerConfig;
use nbend_core::Tensor;

fn toy_dumps(samples: u64) -> (DumpSet, tempfile::TempDir) {
    let g = ToyGenerator::new(2, ModelDescriptor::toy()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let seeds: Vec<u64> = (0..samples).collect();
    dump_activations(&g, &seeds, dir.path()).unwrap();
    (load_external_dump(dir.path()).unwrap(), dir)
}

fn options(lr: f64, epochs: usize, batch_size: usize) -> TrainOptions {
    TrainOptions {
        optimizer: OptimizerConfig {
            learning_rate: lr,
            epochs,
            ..OptimizerConfig::default()
        },
        batch_size,
        seed: 0,
    }
}

fn same_params(a: &MetricCnn, b: &MetricCnn) -> bool {
    let (pa, pb) = (a.params(), b.params());
    pa.len() == pb.len() && pa.iter().zip(&pb).all(|(x, y)| x.bit_eq(y))
}

#[test]
fn training_set_counts_and_labels() {
    let (dumps, _dir) = toy_dumps(25);
    let set = make_training_set(&dumps, 1, 20, 5).unwrap();
    assert_eq!(set.train.len(), 20 * 16);
    assert_eq!(set.test.len(), 5 * 16);
    for f in 0..16 {
        assert_eq!(set.train.iter().filter(|e| e.label == f).count(), 20);
    }
    // Sample 3, feature 7 sits at position 3·16 + 7.
    let want = dumps.get(3, 1).unwrap().activations.slice_outer(7).unwrap();
    assert!(set.train[3 * 16 + 7].map.bit_eq(&want));
    assert!(make_training_set(&dumps, 1, 20, 6).is_err());
    assert!(make_training_set(&dumps, 9, 1, 0).is_err());
}

#[test]
fn thousand_samples_of_512_features() {
    let layer = LayerDescriptor::new(1, 4, 512, 5);
    let descriptor = ModelDescriptor {
        layers: vec![layer],
        ..ModelDescriptor::toy()
    };
    let dumps = (0..1000)
        .map(|s| ActivationDump {
            layer: 1,
            sample: s,
            activations: Tensor::zeros(vec![512, 4, 4]),
        })
        .collect();
    let set = make_training_set(&DumpSet { descriptor, dumps }, 1, 1000, 0).unwrap();
    assert_eq!(set.train.len(), 512_000);
    assert!(set.test.is_empty());
}

#[test]
fn depth_and_seeded_weights() {
    for (res, depth) in [(8, 1), (64, 4), (1024, 8)] {
        let l = LayerDescriptor::new(1, res, 4, 2);
        let a = MetricCnn::new(&l, 9).unwrap();
        assert_eq!(a.depth(), depth);
        assert!(same_params(&a, &MetricCnn::new(&l, 9).unwrap()));
        assert!(!same_params(&a, &MetricCnn::new(&l, 10).unwrap()));
    }
}

#[test]
fn zero_learning_rate_freezes_weights() {
    let (dumps, _dir) = toy_dumps(2);
    let set = make_training_set(&dumps, 1, 2, 0).unwrap();
    let mut m = MetricCnn::new(dumps.descriptor.layer(1).unwrap(), 4).unwrap();
    let before = m.clone();
    let hist = m.train(&set, &options(0.0, 3, set.train.len())).unwrap();
    assert!(same_params(&m, &before));
    let l = hist.losses();
    // The shuffle reorders the batch, so the sum may move in the last bits.
    assert!(l.iter().all(|v| (v - l[0]).abs() <= 1e-6 * l[0]), "{l:?}");
}

#[test]
fn embedding_is_pure_and_survives_head_removal() {
    let (dumps, _dir) = toy_dumps(1);
    let m = MetricCnn::new(dumps.descriptor.layer(2).unwrap(), 1).unwrap();
    let map = dumps.get(0, 2).unwrap().activations.slice_outer(5).unwrap();
    let a = m.embed(&map).unwrap();
    assert!(a.bit_eq(&m.embed(&map).unwrap()));
    let mut headless = m.clone();
    headless.drop_head();
    assert!(!headless.has_head());
    assert!(headless.embed(&map).unwrap().bit_eq(&a));
    assert!(headless.logits(&map).is_err());

    let shifted = map.map(|v| v + 10.0);
    assert!(m.embed(&shifted).unwrap().sq_dist(&a).unwrap() > 0.0);
}

#[test]
fn checkpoint_round_trip() {
    let (dumps, _dir) = toy_dumps(3);
    let set = make_training_set(&dumps, 1, 2, 1).unwrap();
    let mut m = MetricCnn::new(dumps.descriptor.layer(1).unwrap(), 6).unwrap();
    let opts = options(1e-3, 2, 8);
    let hist = m.train(&set, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), Some(&opts), &hist).unwrap();
    let (back, h2) = MetricCnn::load(dir.path()).unwrap();
    assert_eq!(h2, hist);
    assert!(same_params(&m, &back));
    let map = set.test[3].map.clone();
    assert!(back.embed(&map).unwrap().bit_eq(&m.embed(&map).unwrap()));

    m.drop_head();
    let dir2 = tempfile::tempdir().unwrap();
    m.save(dir2.path(), None, &hist).unwrap();
    let (headless, _) = MetricCnn::load(dir2.path()).unwrap();
    assert!(!headless.has_head());
    assert!(same_params(&m, &headless));
}

#[test]
fn loss_falls_over_the_first_epochs() {
    let (dumps, _dir) = toy_dumps(20);
    let set = make_training_set(&dumps, 1, 20, 0).unwrap();
    let mut m = MetricCnn::new(dumps.descriptor.layer(1).unwrap(), 0).unwrap();
    let hist = m.train(&set, &options(1e-4, 10, 16)).unwrap();
    let smooth: Vec<f64> = hist.losses().windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    for w in smooth.windows(2) {
        assert!(w[1] <= w[0], "{:?}", hist.losses());
    }
    assert!(hist.epochs.iter().all(|e| e.test_accuracy.is_none()));
}

#[test]
fn mismatched_training_set_is_rejected() {
    let (dumps, _dir) = toy_dumps(1);
    let set = make_training_set(&dumps, 1, 1, 0).unwrap();
    let mut m = MetricCnn::new(dumps.descriptor.layer(2).unwrap(), 0).unwrap();
    assert!(m.train(&set, &options(1e-4, 1, 4)).is_err());
    let mut ok = MetricCnn::new(dumps.descriptor.layer(1).unwrap(), 0).unwrap();
    assert!(ok.train(&set, &options(1e-4, 1, 0)).is_err());
}
