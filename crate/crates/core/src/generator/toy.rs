use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::ModelDescriptor;
use crate::ops::{conv2d, leaky_relu, linear, nearest_upsample, tanh};
use crate::tensor::Tensor;
use crate::transforms::{apply_to_features, TransformKind};

pub const NEGATIVE_SLOPE: f32 = 0.2;

/// Bias scale for generator convolutions. Non-zero biases give each feature
/// its own resting level, as in a trained network.
const BIAS_STD: f64 = 0.1;

/// A transform inserted after a layer's activations are computed.
#[derive(Clone, Debug, PartialEq)]
pub struct Hook {
    pub layer: usize,
    pub features: Vec<usize>,
    pub transform: TransformKind,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[output_channels, R, R]` in `[-1, 1]`.
    pub image: Tensor<f32>,
    /// Post-hook activations, `taps[d - 1]` for layer `d`.
    pub taps: Vec<Tensor<f32>>,
}

#[derive(Clone, Debug)]
struct ConvParams {
    weight: Tensor<f32>,
    bias: Tensor<f32>,
}

/// Seeded random convolutional generator:
/// latent → linear → `[F₁, R₁, R₁]`, then per layer an optional 2× nearest
/// upsample, 3×3 conv and leaky ReLU; finally a 1×1 conv to RGB and tanh.
#[derive(Clone, Debug)]
pub struct ToyGenerator {
    descriptor: ModelDescriptor,
    seed: u64,
    input_weight: Tensor<f32>,
    input_bias: Tensor<f32>,
    layers: Vec<ConvParams>,
    to_rgb: ConvParams,
}

/// Standard-normal latent vector for a sample seed.
pub fn latent_from_seed(seed: u64, latent_dim: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    Tensor::randn(vec![latent_dim], 1.0, &mut rng)
}

impl ToyGenerator {
    pub fn new(seed: u64, descriptor: ModelDescriptor) -> Result<Self> {
        descriptor.validate()?;
        for pair in descriptor.layers.windows(2) {
            let ratio = pair[1].resolution / pair[0].resolution;
            if ratio != 1 && ratio != 2 {
                return Err(Error::InvalidDescriptor(format!(
                    "toy generator can only keep or double resolution; layer {} goes {} → {}",
                    pair[1].index, pair[0].resolution, pair[1].resolution
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = &descriptor.layers[0];
        let input_width = first.feature_count * first.resolution * first.resolution;
        let latent = descriptor.latent_dim;
        let input_weight = Tensor::randn(vec![input_width, latent], 1.0 / (latent as f64).sqrt(), &mut rng);
        let input_bias = Tensor::zeros(vec![input_width]);

        let mut layers = Vec::with_capacity(descriptor.layers.len());
        let mut c_in = first.feature_count;
        for l in &descriptor.layers {
            let fan_in = (c_in * 9) as f64;
            layers.push(ConvParams {
                weight: Tensor::randn(vec![l.feature_count, c_in, 3, 3], 1.0 / fan_in.sqrt(), &mut rng),
                bias: Tensor::randn(vec![l.feature_count], BIAS_STD, &mut rng),
            });
            c_in = l.feature_count;
        }
        let to_rgb = ConvParams {
            weight: Tensor::randn(
                vec![descriptor.output_channels, c_in, 1, 1],
                1.0 / (c_in as f64).sqrt(),
                &mut rng,
            ),
            bias: Tensor::zeros(vec![descriptor.output_channels]),
        };
        Ok(ToyGenerator {
            descriptor,
            seed,
            input_weight,
            input_bias,
            layers,
            to_rgb,
        })
    }

    pub fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// All weight tensors in a fixed order.
    pub fn weights(&self) -> Vec<&Tensor<f32>> {
        let mut w = vec![&self.input_weight, &self.input_bias];
        for l in &self.layers {
            w.push(&l.weight);
            w.push(&l.bias);
        }
        w.push(&self.to_rgb.weight);
        w.push(&self.to_rgb.bias);
        w
    }

    /// Latent → `[F₁, R₁, R₁]` input to layer 1.
    pub fn stem(&self, latent: &Tensor<f32>) -> Result<Tensor<f32>> {
        if latent.shape() != [self.descriptor.latent_dim] {
            return Err(Error::shape(
                "generator",
                format!(
                    "latent must be [{}], got {:?}",
                    self.descriptor.latent_dim,
                    latent.shape()
                ),
            ));
        }
        let first = &self.descriptor.layers[0];
        linear(latent, &self.input_weight, &self.input_bias)?.reshape(first.map_shape().to_vec())
    }

    /// Compute layer `layer`'s activations from the previous stage's output.
    pub fn layer_step(&self, layer: usize, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let desc = self
            .descriptor
            .layer(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("layer {layer} not in model")))?;
        let x = if input.shape().last() != Some(&desc.resolution) {
            nearest_upsample(input)?
        } else {
            input.clone()
        };
        let p = &self.layers[layer - 1];
        let pre = conv2d(&x, &p.weight, &p.bias, 1, 1)?;
        Ok(leaky_relu(&pre, NEGATIVE_SLOPE))
    }

    /// Final 1×1 projection to image channels with tanh.
    pub fn to_image(&self, last: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(tanh(&conv2d(last, &self.to_rgb.weight, &self.to_rgb.bias, 1, 0)?))
    }

    pub fn check_hooks(&self, hooks: &[Hook]) -> Result<()> {
        let n = self.descriptor.layer_count();
        for h in hooks {
            let Some(l) = self.descriptor.layer(h.layer) else {
                return Err(Error::InvalidArgument(format!(
                    "hook references layer {} but the model has layers 1..{n}",
                    h.layer
                )));
            };
            if let Some(&f) = h.features.iter().find(|&&f| f >= l.feature_count) {
                return Err(Error::InvalidArgument(format!(
                    "hook at layer {} selects feature {f} of {}",
                    h.layer, l.feature_count
                )));
            }
            h.transform.validate()?;
        }
        Ok(())
    }

    /// Run the generator, applying every hook registered at layer `d` (in
    /// the given order) right after layer `d`'s activations are computed.
    pub fn forward(&self, latent: &Tensor<f32>, hooks: &[Hook]) -> Result<ForwardOutput> {
        self.check_hooks(hooks)?;
        let mut x = self.stem(latent)?;
        let mut taps = Vec::with_capacity(self.descriptor.layer_count());
        for d in 1..=self.descriptor.layer_count() {
            x = self.layer_step(d, &x)?;
            for h in hooks.iter().filter(|h| h.layer == d) {
                x = apply_to_features(&x, &h.features, &h.transform)?;
            }
            taps.push(x.clone());
        }
        let image = self.to_image(&x)?;
        Ok(ForwardOutput { image, taps })
    }
}
