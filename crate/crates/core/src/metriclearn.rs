//! Per-layer bottleneck CNNs trained to tell a layer's features apart from
//! their activation maps. After training the classification head is
//! dropped and the 10-d bottleneck output serves as the feature embedding.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{DumpSet, LayerDescriptor};
use crate::nbt;
use crate::ops::{conv2d, leaky_relu, linear, Flatten, Layer, Linear, ResidualBlock, SoftmaxCrossEntropy};
use crate::optim::{Adam, OptimizerConfig};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 50;
pub const EMBEDDING_DIM: usize = 10;
pub const NEGATIVE_SLOPE: f32 = 0.2;
const FLAT_WIDTH: usize = CHANNELS * 4 * 4;
const MANIFEST: &str = "manifest.json";

/// Labeled activation maps for one layer; the label is the feature index.
#[derive(Clone, Debug)]
pub struct Example {
    pub map: Tensor<f32>,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub layer: usize,
    pub resolution: usize,
    pub feature_count: usize,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Split a layer's dumps by sample: the first `n_train` samples (in
/// ascending sample order) train, the next `n_test` test.
pub fn make_training_set(dumps: &DumpSet, layer: usize, n_train: usize, n_test: usize) -> Result<TrainingSet> {
    let desc = dumps
        .descriptor
        .layer(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} not in dump descriptor")))?;
    let maps: Vec<&Tensor<f32>> = dumps.layer(layer).map(|d| &d.activations).collect();
    if maps.len() < n_train + n_test {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} has {} samples, need {n_train} train + {n_test} test",
            maps.len()
        )));
    }
    let examples = |range: &[&Tensor<f32>]| -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(range.len() * desc.feature_count);
        for t in range {
            for f in 0..desc.feature_count {
                out.push(Example {
                    map: t.slice_outer(f)?,
                    label: f,
                });
            }
        }
        Ok(out)
    };
    Ok(TrainingSet {
        layer,
        resolution: desc.resolution,
        feature_count: desc.feature_count,
        train: examples(&maps[..n_train])?,
        test: examples(&maps[n_train..n_train + n_test])?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss.
    pub loss: f64,
    /// Accuracy on each minibatch before its update, pooled over the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

/// Residual downsampling blocks → flatten (4×4×50) → linear to ℝ¹⁰ →
/// linear to one logit per feature.
#[derive(Clone, Debug)]
pub struct MetricCnn {
    pub layer: usize,
    pub resolution: usize,
    pub feature_count: usize,
    pub seed: u64,
    blocks: Vec<ResidualBlock<f32>>,
    flatten: Flatten,
    bottleneck: Linear<f32>,
    head: Option<Linear<f32>>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    layer: usize,
    resolution: usize,
    feature_count: usize,
    depth: usize,
    channels: usize,
    embedding_dim: usize,
    seed: u64,
    has_head: bool,
    params: Vec<String>,
    #[serde(default)]
    training: Option<TrainOptions>,
    #[serde(default)]
    history: TrainHistory,
}

impl MetricCnn {
    pub fn new(layer: &LayerDescriptor, seed: u64) -> Result<Self> {
        if layer.resolution < 8 || !layer.resolution.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "layer {}: resolution {} cannot be halved down to 4×4 by at least one block",
                layer.index, layer.resolution
            )));
        }
        if layer.feature_count == 0 {
            return Err(Error::InvalidArgument(format!("layer {} has no features", layer.index)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = layer.depth();
        let blocks = (0..depth)
            .map(|i| ResidualBlock::init(if i == 0 { 1 } else { CHANNELS }, CHANNELS, NEGATIVE_SLOPE, &mut rng))
            .collect();
        let bottleneck = Linear::init(FLAT_WIDTH, EMBEDDING_DIM, &mut rng);
        let head = Linear::init(EMBEDDING_DIM, layer.feature_count, &mut rng);
        Ok(MetricCnn {
            layer: layer.index,
            resolution: layer.resolution,
            feature_count: layer.feature_count,
            seed,
            blocks,
            flatten: Flatten::default(),
            bottleneck,
            head: Some(head),
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn has_head(&self) -> bool {
        self.head.is_some()
    }

    /// Discard the classification head.
    pub fn drop_head(&mut self) {
        self.head = None;
    }

    pub fn params(&self) -> Vec<&Tensor<f32>> {
        let mut p: Vec<&Tensor<f32>> = self.blocks.iter().flat_map(|b| b.params()).collect();
        p.extend(self.bottleneck.params());
        if let Some(h) = &self.head {
            p.extend(h.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut p: Vec<&mut Tensor<f32>> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        p.extend(self.bottleneck.params_mut());
        if let Some(h) = &mut self.head {
            p.extend(h.params_mut());
        }
        p
    }

    fn grads(&self) -> Vec<&Tensor<f32>> {
        let mut g: Vec<&Tensor<f32>> = self.blocks.iter().flat_map(|b| b.grads()).collect();
        g.extend(self.bottleneck.grads());
        if let Some(h) = &self.head {
            g.extend(h.grads());
        }
        g
    }

    fn zero_grad(&mut self) {
        for b in &mut self.blocks {
            b.zero_grad();
        }
        self.bottleneck.zero_grad();
        if let Some(h) = &mut self.head {
            h.zero_grad();
        }
    }

    fn check_map(&self, map: &Tensor<f32>) -> Result<()> {
        let r = self.resolution;
        if map.shape() != [r, r] && map.shape() != [1, r, r] {
            return Err(Error::shape(
                "metric_cnn",
                format!("layer {} expects a {r}×{r} map, got {:?}", self.layer, map.shape()),
            ));
        }
        Ok(())
    }

    fn trunk(&self, map: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_map(map)?;
        let r = self.resolution;
        let mut x = map.clone().reshape(vec![1, r, r])?;
        for b in &self.blocks {
            let main = &b.main;
            let skip = &b.shortcut;
            let mut y = leaky_relu(&conv2d(&x, &main.weight, &main.bias, main.stride, main.padding)?, NEGATIVE_SLOPE);
            y.add_assign(&conv2d(&x, &skip.weight, &skip.bias, skip.stride, skip.padding)?)?;
            x = y;
        }
        let len = x.len();
        let flat = x.reshape(vec![len])?;
        linear(&flat, &self.bottleneck.weight, &self.bottleneck.bias)
    }

    /// Bottleneck embedding `v ∈ ℝ¹⁰` of one activation map. Never touches
    /// the head.
    pub fn embed(&self, map: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.trunk(map)
    }

    /// Embeddings of every map in a `[F, R, R]` layer tap, in feature order.
    pub fn embed_features(&self, tap: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        if tap.rank() != 3 {
            return Err(Error::shape("metric_cnn", format!("expected [F, R, R], got {:?}", tap.shape())));
        }
        (0..tap.shape()[0]).map(|f| self.embed(&tap.slice_outer(f)?)).collect()
    }

    /// Head logits for one map.
    pub fn logits(&self, map: &Tensor<f32>) -> Result<Tensor<f32>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("classification head has been dropped".into()))?;
        linear(&self.trunk(map)?, &head.weight, &head.bias)
    }

    pub fn predict(&self, map: &Tensor<f32>) -> Result<usize> {
        let l = self.logits(map)?;
        Ok(argmax(l.data()))
    }

    /// Fraction of examples whose predicted feature equals the label.
    pub fn evaluate(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for e in examples {
            if self.predict(&e.map)? == e.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / examples.len() as f64)
    }

    /// One minibatch: forward, loss, backward, Adam update. Returns the
    /// mean loss and the number of correct predictions before the update.
    fn train_batch(&mut self, batch: &[&Example], adam: &mut Adam<f32>) -> Result<(f64, usize)> {
        let r = self.resolution;
        let maps: Vec<&Tensor<f32>> = batch.iter().map(|e| &e.map).collect();
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let mut x = Tensor::stack(&maps)?.reshape(vec![batch.len(), 1, r, r])?;

        self.zero_grad();
        for b in &mut self.blocks {
            x = b.forward(&x)?;
        }
        x = Layer::<f32>::forward(&mut self.flatten, &x)?;
        x = self.bottleneck.forward(&x)?;
        let head = self
            .head
            .as_mut()
            .ok_or_else(|| Error::InvalidArgument("cannot train without a classification head".into()))?;
        let logits = head.forward(&x)?;
        let k = self.feature_count;
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(i, &t)| argmax(&logits.data()[i * k..(i + 1) * k]) == t)
            .count();
        let mut loss_node = SoftmaxCrossEntropy::new(labels);
        let loss = loss_node.forward(&logits)?.data()[0] as f64;

        let mut g = loss_node.backward(&Tensor::full(vec![1], 1.0))?;
        g = head.backward(&g)?;
        g = self.bottleneck.backward(&g)?;
        g = Layer::<f32>::backward(&mut self.flatten, &g)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }

        let grads: Vec<Tensor<f32>> = self.grads().into_iter().cloned().collect();
        let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
        adam.step(&mut self.params_mut(), &grad_refs)?;
        Ok((loss, correct))
    }

    /// Train the classifier with softmax cross-entropy and Adam.
    pub fn train(&mut self, data: &TrainingSet, options: &TrainOptions) -> Result<TrainHistory> {
        self.train_with(data, options, |_| {})
    }

    /// As [`MetricCnn::train`], calling `progress` after every epoch.
    pub fn train_with(
        &mut self,
        data: &TrainingSet,
        options: &TrainOptions,
        mut progress: impl FnMut(&EpochStats),
    ) -> Result<TrainHistory> {
        options.optimizer.validate()?;
        if options.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if data.resolution != self.resolution || data.feature_count != self.feature_count {
            return Err(Error::shape(
                "metric_cnn",
                format!(
                    "training set is {} features at {}², model is {} features at {}²",
                    data.feature_count, data.resolution, self.feature_count, self.resolution
                ),
            ));
        }
        if data.train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let mut adam = Adam::new(options.optimizer.clone(), &self.params());
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut history = TrainHistory::default();
        for epoch in 1..=options.optimizer.epochs {
            order.shuffle(&mut rng);
            let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
            for chunk in order.chunks(options.batch_size) {
                let batch: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
                let (loss, c) = self.train_batch(&batch, &mut adam)?;
                loss_sum += loss;
                correct += c;
                batches += 1;
            }
            let stats = EpochStats {
                epoch,
                loss: loss_sum / batches as f64,
                train_accuracy: correct as f64 / data.train.len() as f64,
                test_accuracy: if data.test.is_empty() {
                    None
                } else {
                    Some(self.evaluate(&data.test)?)
                },
            };
            progress(&stats);
            history.epochs.push(stats);
        }
        Ok(history)
    }

    /// Write `manifest.json` plus one NBT file per parameter tensor.
    pub fn save(
        &self,
        dir: impl AsRef<Path>,
        training: Option<&TrainOptions>,
        history: &TrainHistory,
    ) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut names = Vec::new();
        for (i, p) in self.params().into_iter().enumerate() {
            let name = format!("param{i:02}.nbt");
            let path = dir.join(&name);
            nbt::write(&path, p)?;
            written.push(path);
            names.push(name);
        }
        let manifest = CheckpointManifest {
            layer: self.layer,
            resolution: self.resolution,
            feature_count: self.feature_count,
            depth: self.depth(),
            channels: CHANNELS,
            embedding_dim: EMBEDDING_DIM,
            seed: self.seed,
            has_head: self.has_head(),
            params: names,
            training: training.cloned(),
            history: history.clone(),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }

    /// Load a checkpoint directory written by [`MetricCnn::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, TrainHistory)> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if m.channels != CHANNELS || m.embedding_dim != EMBEDDING_DIM {
            return Err(Error::Format {
                path,
                msg: format!(
                    "checkpoint has {} channels / {}-d bottleneck, expected {CHANNELS} / {EMBEDDING_DIM}",
                    m.channels, m.embedding_dim
                ),
            });
        }
        let desc = LayerDescriptor::new(m.layer, m.resolution, m.feature_count, 1);
        let mut model = MetricCnn::new(&desc, m.seed)?;
        if model.depth() != m.depth {
            return Err(Error::Format {
                path,
                msg: format!("depth {} does not match resolution {}", m.depth, m.resolution),
            });
        }
        if !m.has_head {
            model.drop_head();
        }
        if m.params.len() != model.params().len() {
            return Err(Error::Format {
                path,
                msg: format!("lists {} parameters, model has {}", m.params.len(), model.params().len()),
            });
        }
        for (slot, name) in model.params_mut().into_iter().zip(&m.params) {
            let p = dir.join(name);
            let t = nbt::read(&p)?;
            if t.shape() != slot.shape() {
                return Err(Error::Format {
                    path: p,
                    msg: format!("expected shape {:?}, found {:?}", slot.shape(), t.shape()),
                });
            }
            *slot = t;
        }
        Ok((model, m.history))
    }
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
