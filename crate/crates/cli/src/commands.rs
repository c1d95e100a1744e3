use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nbend_core::bendconfig::parse_config;
use nbend_core::clustering::{cluster_mean, cluster_sample, ClusterModel};
use nbend_core::generator::{dump_activations, latent_from_seed, load_external_dump, ModelDescriptor, ToyGenerator};
use nbend_core::metriclearn::{make_training_set, MetricCnn, TrainOptions};
use nbend_core::nbt;
use nbend_core::optim::OptimizerConfig;
use nbend_core::Tensor;

use crate::args::*;
use crate::manifest::Recorder;
use crate::picture::encode_png;

fn generator(m: &ModelArgs, rec: &mut Recorder) -> Result<ToyGenerator> {
    let descriptor = match &m.descriptor {
        Some(p) => {
            rec.input(p)?;
            ModelDescriptor::load(p)?
        }
        None => ModelDescriptor::toy(),
    };
    Ok(ToyGenerator::new(m.model_seed, descriptor)?)
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_png(path: &Path, image: &Tensor<f32>, rec: &mut Recorder) -> Result<()> {
    fs::write(path, encode_png(image)?).with_context(|| format!("writing {}", path.display()))?;
    rec.artifact(path)
}

pub fn generate(a: &GenerateArgs, rec: &mut Recorder) -> Result<()> {
    let g = generator(&a.model, rec)?;
    create_out(&a.out)?;
    let dim = g.descriptor().latent_dim;
    for &seed in &a.seeds.0 {
        let out = g.forward(&latent_from_seed(seed, dim), &[])?;
        write_png(&a.out.join(format!("seed{seed}.png")), &out.image, rec)?;
    }
    Ok(())
}

pub fn dump(a: &DumpArgs, rec: &mut Recorder) -> Result<()> {
    let g = generator(&a.model, rec)?;
    for path in dump_activations(&g, &a.seeds.0, &a.out)? {
        rec.artifact(&path)?;
    }
    Ok(())
}

pub fn train_metric(a: &TrainMetricArgs, rec: &mut Recorder) -> Result<()> {
    rec.input_dir(&a.dumps)?;
    let dumps = load_external_dump(&a.dumps)?;
    let layer = dumps
        .descriptor
        .layer(a.layer)
        .ok_or_else(|| anyhow!("layer {} not in model (1..{})", a.layer, dumps.descriptor.layer_count()))?
        .clone();
    let available = dumps.samples().len();
    let n_train = a.train.unwrap_or(available.saturating_sub(a.test));
    let data = make_training_set(&dumps, a.layer, n_train, a.test)?;
    let options = TrainOptions {
        optimizer: OptimizerConfig {
            learning_rate: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            epochs: a.epochs,
        },
        batch_size: a.batch_size.unwrap_or(layer.batch()),
        seed: a.seed,
    };
    let mut model = MetricCnn::new(&layer, a.seed)?;
    let log = |line: String| {
        if !a.quiet {
            eprintln!("{line}");
        }
    };
    log(format!(
        "layer {}: {} train / {} test examples, batch {}",
        a.layer,
        data.train.len(),
        data.test.len(),
        options.batch_size
    ));
    let history = model.train_with(&data, &options, |s| {
        let test = s.test_accuracy.map(|t| format!(", test {:.1}%", 100.0 * t)).unwrap_or_default();
        log(format!(
            "epoch {:>3}/{}: loss {:.4}, train {:.1}%{test}",
            s.epoch,
            a.epochs,
            s.loss,
            100.0 * s.train_accuracy
        ));
    })?;
    for path in model.save(&a.out, Some(&options), &history)? {
        rec.artifact(&path)?;
    }
    Ok(())
}

pub fn cluster(a: &ClusterArgs, rec: &mut Recorder) -> Result<()> {
    rec.input_dir(&a.dumps)?;
    let dumps = load_external_dump(&a.dumps)?;
    let mut descriptor = dumps.descriptor.clone();
    for o in &a.k {
        let l = descriptor
            .layers
            .iter_mut()
            .find(|l| l.index == o.layer)
            .ok_or_else(|| anyhow!("--k {o}: layer {} not in model", o.layer))?;
        l.cluster_count = o.k;
    }

    let mut models = BTreeMap::new();
    for dir in &a.checkpoints {
        rec.input_dir(dir)?;
        let (m, _) = MetricCnn::load(dir)?;
        let Some(l) = descriptor.layer(m.layer) else {
            bail!("{}: layer {} not in model", dir.display(), m.layer);
        };
        if (l.resolution, l.feature_count) != (m.resolution, m.feature_count) {
            bail!(
                "{}: checkpoint is {} features at {}², layer {} is {} at {}²",
                dir.display(),
                m.feature_count,
                m.resolution,
                l.index,
                l.feature_count,
                l.resolution
            );
        }
        let layer = m.layer;
        if models.insert(layer, m).is_some() {
            bail!("two checkpoints for layer {layer}");
        }
    }
    descriptor.layers.retain(|l| models.contains_key(&l.index));

    let fits = match a.mode {
        ClusterMode::Sample => {
            let samples = dumps.samples();
            if samples.len() != 1 {
                bail!("sample mode requires exactly one sample, found {}", samples.len());
            }
            let taps: Vec<Tensor<f32>> = descriptor
                .layers
                .iter()
                .map(|l| dumps.get(samples[0], l.index).expect("loaded").activations.clone())
                .collect();
            cluster_sample(&models, &taps, &descriptor, a.seed)?
        }
        ClusterMode::Mean => cluster_mean(&models, &dumps, &descriptor, a.seed)?,
    };
    create_out(&a.out)?;
    for fit in fits {
        let path = a.out.join(format!("layer{}.json", fit.layer));
        fit.save(&path)?;
        rec.artifact(&path)?;
    }
    Ok(())
}

pub fn bend(a: &BendArgs, rec: &mut Recorder) -> Result<()> {
    let g = generator(&a.model, rec)?;
    rec.input(&a.config)?;
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let config = parse_config(&text).with_context(|| a.config.display().to_string())?;

    let mut clusters = BTreeMap::new();
    for path in &a.clusters {
        rec.input(path)?;
        let m = ClusterModel::load(path)?;
        if let Some(prev) = clusters.insert(m.layer, m) {
            bail!("{}: second cluster file for layer {}", path.display(), prev.layer);
        }
    }
    let hooks = config
        .resolve(g.descriptor(), (!clusters.is_empty()).then_some(&clusters))
        .with_context(|| a.config.display().to_string())?;

    let dim = g.descriptor().latent_dim;
    let latent = match (&a.latent.seed, &a.latent.latent) {
        (Some(seed), _) => latent_from_seed(*seed, dim),
        (None, Some(path)) => {
            rec.input(path)?;
            let z = nbt::read(path)?;
            if z.shape() != [dim] {
                bail!("{}: latent has shape {:?}, model expects [{dim}]", path.display(), z.shape());
            }
            z
        }
        (None, None) => bail!("one of --seed or --latent is required"),
    };

    let out = g.forward(&latent, &hooks)?;
    create_out(&a.out)?;
    write_png(&a.out.join("bent.png"), &out.image, rec)?;
    if a.dump_taps {
        for (i, tap) in out.taps.iter().enumerate() {
            let path = a.out.join(format!("layer{}.nbt", i + 1));
            nbt::write(&path, tap)?;
            rec.artifact(&path)?;
        }
    }
    Ok(())
}
