//! Command-line arguments. The same types are stored in run manifests, so
//! a recorded run can be executed again without re-parsing a command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "nbend", version, about = "Bend a convolutional generator by transforming its activation maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    #[command(flatten)]
    Run(RunCommand),
    /// Re-execute a recorded run and check its artifacts are byte-identical.
    Replay(ReplayArgs),
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunCommand {
    /// Render images from latent seeds with no transforms applied.
    Generate(GenerateArgs),
    /// Write every layer's activations for a set of seeds.
    Dump(DumpArgs),
    /// Train the metric-learning CNN for one layer.
    TrainMetric(TrainMetricArgs),
    /// Cluster each layer's features by their embeddings.
    Cluster(ClusterArgs),
    /// Render one image with the transforms of a bending config.
    Bend(BendArgs),
}

impl RunCommand {
    pub fn name(&self) -> &'static str {
        match self {
            RunCommand::Generate(_) => "generate",
            RunCommand::Dump(_) => "dump",
            RunCommand::TrainMetric(_) => "train-metric",
            RunCommand::Cluster(_) => "cluster",
            RunCommand::Bend(_) => "bend",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            RunCommand::Generate(a) => &a.out,
            RunCommand::Dump(a) => &a.out,
            RunCommand::TrainMetric(a) => &a.out,
            RunCommand::Cluster(a) => &a.out,
            RunCommand::Bend(a) => &a.out,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            RunCommand::Generate(a) => a.out = out,
            RunCommand::Dump(a) => a.out = out,
            RunCommand::TrainMetric(a) => a.out = out,
            RunCommand::Cluster(a) => a.out = out,
            RunCommand::Bend(a) => a.out = out,
        }
    }

    /// Make every path absolute so the command means the same thing from
    /// any working directory.
    pub fn absolutize(&mut self) -> std::io::Result<()> {
        fn abs(p: &mut PathBuf) -> std::io::Result<()> {
            *p = std::path::absolute(&*p)?;
            Ok(())
        }
        fn abs_model(m: &mut ModelArgs) -> std::io::Result<()> {
            m.descriptor.as_mut().map(abs).transpose()?;
            Ok(())
        }
        match self {
            RunCommand::Generate(a) => {
                abs_model(&mut a.model)?;
                abs(&mut a.out)
            }
            RunCommand::Dump(a) => {
                abs_model(&mut a.model)?;
                abs(&mut a.out)
            }
            RunCommand::TrainMetric(a) => {
                abs(&mut a.dumps)?;
                abs(&mut a.out)
            }
            RunCommand::Cluster(a) => {
                abs(&mut a.dumps)?;
                a.checkpoints.iter_mut().try_for_each(abs)?;
                abs(&mut a.out)
            }
            RunCommand::Bend(a) => {
                abs_model(&mut a.model)?;
                abs(&mut a.config)?;
                a.latent.latent.as_mut().map(abs).transpose()?;
                a.clusters.iter_mut().try_for_each(abs)?;
                abs(&mut a.out)
            }
        }
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Model descriptor JSON. Defaults to the built-in 4-layer toy model.
    #[arg(long, env = "NBEND_DESCRIPTOR")]
    pub descriptor: Option<PathBuf>,
    /// Seed for the generator's weights.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

/// Latent seeds, written as a comma list of numbers and inclusive ranges:
/// `0-49,100`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seeds(pub Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("bad seed `{t}` in `{s}`"));
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b) = (num(a)?, num(b)?);
                    if a > b {
                        return Err(format!("empty seed range `{part}`"));
                    }
                    out.extend(a..=b);
                }
                None => out.push(num(part)?),
            }
        }
        Ok(Seeds(out))
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Latent seeds, e.g. `3` or `0-4,10`. One image per seed.
    #[arg(long)]
    pub seeds: Seeds,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory; images are named `seed{N}.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpArgs {
    #[arg(long)]
    pub seeds: Seeds,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetricArgs {
    /// Dump directory written by `nbend dump` or an external exporter.
    #[arg(long)]
    pub dumps: PathBuf,
    #[arg(long)]
    pub layer: usize,
    /// Training samples, taken in ascending sample order. Defaults to
    /// every sample not held out for testing.
    #[arg(long)]
    pub train: Option<usize>,
    /// Held-out samples, taken after the training ones.
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// Defaults to the layer's batch size from the descriptor.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seeds both the initial weights and the per-epoch shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    #[serde(default)]
    pub quiet: bool,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    /// Cluster one sample's embeddings.
    Sample,
    /// Cluster mean embeddings over every sample in the dump.
    Mean,
}

/// Per-layer cluster count override, `LAYER=K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerK {
    pub layer: usize,
    pub k: usize,
}

impl FromStr for LayerK {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected LAYER=K, got `{s}`");
        let (l, k) = s.split_once('=').ok_or_else(bad)?;
        Ok(LayerK {
            layer: l.trim().parse().map_err(|_| bad())?,
            k: k.trim().parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for LayerK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.layer, self.k)
    }
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterArgs {
    #[arg(long)]
    pub dumps: PathBuf,
    /// Metric CNN checkpoint directory; repeat once per layer. Only
    /// layers with a checkpoint are clustered.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: ClusterMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override a layer's cluster count, e.g. `--k 2=5`.
    #[arg(long = "k")]
    pub k: Vec<LayerK>,
    /// Output directory; one `layer{D}.json` per clustered layer.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[group(required = true, multiple = false)]
pub struct LatentSource {
    /// Draw the latent from this seed, as `generate` does.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Read the latent vector from an NBT file.
    #[arg(long)]
    pub latent: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BendArgs {
    /// YAML bending config.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub latent: LatentSource,
    /// Cluster model JSON written by `nbend cluster`; repeat per layer.
    #[arg(long = "clusters")]
    pub clusters: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also write the post-transform activations as `layer{D}.nbt`.
    #[arg(long)]
    pub dump_taps: bool,
    /// Output directory; the image is `bent.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// `run-manifest.json` of the run to repeat.
    pub manifest: PathBuf,
    /// Write the artifacts here instead of over the originals.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
