//! Forward/backward operations with hand-derived gradients.
//!
//! Every [`Layer`] works on batched input (sample axis first). The free
//! functions in the submodules operate on single samples and are what the
//! generator uses at inference time.

mod activation;
mod conv;
mod linear;
mod loss;
mod residual;
mod reshape;

pub use activation::{leaky_relu, leaky_relu_backward, tanh, LeakyRelu};
pub use conv::{conv2d, conv2d_backward, conv_output_extent, Conv2d, ConvGrads};
pub use linear::{linear, linear_backward, Linear, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward, SoftmaxCrossEntropy};
pub use residual::ResidualBlock;
pub use reshape::{nearest_upsample, nearest_upsample_backward, Flatten, NearestUpsample};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// The operation kinds the engine differentiates through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    Linear,
    LeakyRelu,
    ResidualBlockDownsample,
    Flatten,
    SoftmaxCrossEntropy,
    NearestUpsample,
}

/// A differentiable node.
///
/// `forward` caches whatever `backward` needs; `backward` returns the
/// gradient with respect to the input and accumulates parameter gradients
/// (cleared by `zero_grad`).
pub trait Layer<T: Scalar> {
    fn kind(&self) -> OpKind;

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>>;

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>>;

    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }

    fn grads(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {}
}
