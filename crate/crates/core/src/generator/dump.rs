use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::generator::{latent_from_seed, ModelDescriptor, ToyGenerator};
use crate::nbt;
use crate::tensor::Tensor;

pub const DESCRIPTOR_FILE: &str = "descriptor.json";

/// One layer's activations for one sample, `[F, R, R]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDump {
    pub layer: usize,
    pub sample: u64,
    pub activations: Tensor<f32>,
}

pub fn dump_file_name(sample: u64, layer: usize) -> String {
    format!("sample{sample}_layer{layer}.nbt")
}

fn parse_dump_name(name: &str) -> Option<(u64, usize)> {
    let rest = name.strip_prefix("sample")?.strip_suffix(".nbt")?;
    let (s, l) = rest.split_once("_layer")?;
    Some((s.parse().ok()?, l.parse().ok()?))
}

/// Write `sample{S}_layer{D}.nbt` for every seed and layer plus
/// `descriptor.json`. Returns the written paths, descriptor last.
pub fn dump_activations(generator: &ToyGenerator, seeds: &[u64], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let desc = generator.descriptor();
    let mut written = Vec::new();
    for &seed in seeds {
        let out = generator.forward(&latent_from_seed(seed, desc.latent_dim), &[])?;
        for (i, tap) in out.taps.iter().enumerate() {
            let path = dir.join(dump_file_name(seed, i + 1));
            nbt::write(&path, tap)?;
            written.push(path);
        }
    }
    let path = dir.join(DESCRIPTOR_FILE);
    desc.save(&path)?;
    written.push(path);
    Ok(written)
}

/// A validated dump directory.
#[derive(Clone, Debug)]
pub struct DumpSet {
    pub descriptor: ModelDescriptor,
    /// Sorted by sample, then layer.
    pub dumps: Vec<ActivationDump>,
}

impl DumpSet {
    pub fn samples(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.dumps.iter().map(|d| d.sample).collect();
        s.dedup();
        s
    }

    pub fn layer(&self, layer: usize) -> impl Iterator<Item = &ActivationDump> {
        self.dumps.iter().filter(move |d| d.layer == layer)
    }

    pub fn get(&self, sample: u64, layer: usize) -> Option<&ActivationDump> {
        self.dumps.iter().find(|d| d.sample == sample && d.layer == layer)
    }

    /// Per-layer taps of one sample, `taps[d - 1]`.
    pub fn taps(&self, sample: u64) -> Option<Vec<Tensor<f32>>> {
        (1..=self.descriptor.layer_count())
            .map(|l| self.get(sample, l).map(|d| d.activations.clone()))
            .collect()
    }
}

/// Load a dump directory written by [`dump_activations`] or an external
/// exporter, validating every tensor against `descriptor.json`.
pub fn load_external_dump(dir: impl AsRef<Path>) -> Result<DumpSet> {
    let dir = dir.as_ref();
    let desc_path = dir.join(DESCRIPTOR_FILE);
    if !desc_path.is_file() {
        return Err(Error::Format {
            path: desc_path,
            msg: "missing descriptor sidecar".into(),
        });
    }
    let descriptor = ModelDescriptor::load(&desc_path)?;

    let mut found: BTreeMap<(u64, usize), PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some((sample, layer)) = name.to_str().and_then(parse_dump_name) else {
            continue;
        };
        if descriptor.layer(layer).is_none() {
            return Err(Error::Format {
                path: entry.path(),
                msg: format!("layer {layer} is not in the descriptor (1..{})", descriptor.layer_count()),
            });
        }
        found.insert((sample, layer), entry.path());
    }

    let mut samples: Vec<u64> = found.keys().map(|&(s, _)| s).collect();
    samples.dedup();
    let mut dumps = Vec::with_capacity(found.len());
    for &sample in &samples {
        for l in &descriptor.layers {
            let Some(path) = found.get(&(sample, l.index)) else {
                return Err(Error::Format {
                    path: dir.join(dump_file_name(sample, l.index)),
                    msg: "missing layer file for a dumped sample".into(),
                });
            };
            let t = nbt::read(path)?;
            let expected = l.map_shape();
            if t.shape() != expected {
                return Err(Error::Format {
                    path: path.clone(),
                    msg: format!("expected shape {:?}, found {:?}", expected, t.shape()),
                });
            }
            if !t.is_finite() {
                return Err(Error::Format {
                    path: path.clone(),
                    msg: "contains non-finite values".into(),
                });
            }
            dumps.push(ActivationDump {
                layer: l.index,
                sample,
                activations: t,
            });
        }
    }
    Ok(DumpSet { descriptor, dumps })
}
