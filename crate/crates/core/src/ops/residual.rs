use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{leaky_relu, leaky_relu_backward, Conv2d, Layer, OpKind};
use crate::tensor::{Scalar, Tensor};

/// Downsampling residual block:
/// `leaky_relu(conv3x3_s2(x)) + conv1x1_s2(x)`.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Scalar = f32> {
    pub main: Conv2d<T>,
    pub shortcut: Conv2d<T>,
    pub negative_slope: T,
    cached_pre_activation: Option<Tensor<T>>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(main: Conv2d<T>, shortcut: Conv2d<T>, negative_slope: T) -> Result<Self> {
        let (m, s) = (main.weight.shape(), shortcut.weight.shape());
        if m[0] != s[0] || m[1] != s[1] || main.stride != shortcut.stride {
            return Err(Error::shape(
                "residual_block",
                format!("main {m:?} (stride {}) and shortcut {s:?} (stride {}) disagree", main.stride, shortcut.stride),
            ));
        }
        Ok(ResidualBlock {
            main,
            shortcut,
            negative_slope,
            cached_pre_activation: None,
        })
    }

    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, negative_slope: T, rng: &mut R) -> Self {
        let main = Conv2d::init(c_in, c_out, 3, 2, 1, rng);
        let shortcut = Conv2d::init(c_in, c_out, 1, 2, 0, rng);
        Self::new(main, shortcut, negative_slope).expect("consistent by construction")
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn kind(&self) -> OpKind {
        OpKind::ResidualBlockDownsample
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let pre = self.main.forward(input)?;
        let mut out = leaky_relu(&pre, self.negative_slope);
        let skip = self.shortcut.forward(input)?;
        out.add_assign(&skip)?;
        self.cached_pre_activation = Some(pre);
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let pre = self
            .cached_pre_activation
            .as_ref()
            .ok_or(Error::BackwardBeforeForward { op: "residual_block" })?;
        let g_pre = leaky_relu_backward(pre, grad_output, self.negative_slope)?;
        let mut gi = self.main.backward(&g_pre)?;
        gi.add_assign(&self.shortcut.backward(grad_output)?)?;
        Ok(gi)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = self.main.params();
        p.extend(self.shortcut.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = self.main.params_mut();
        p.extend(self.shortcut.params_mut());
        p
    }

    fn grads(&self) -> Vec<&Tensor<T>> {
        let mut g = self.main.grads();
        g.extend(self.shortcut.grads());
        g
    }

    fn zero_grad(&mut self) {
        self.main.zero_grad();
        self.shortcut.zero_grad();
    }
}
