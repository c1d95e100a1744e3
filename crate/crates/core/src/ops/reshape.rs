use crate::error::{Error, Result};
use crate::ops::{Layer, OpKind};
use crate::tensor::{Scalar, Tensor};

/// Nearest-neighbour 2× upsampling of the last two axes.
pub fn nearest_upsample<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let r = input.rank();
    if r < 2 {
        return Err(Error::shape("nearest_upsample", "need at least two spatial axes"));
    }
    let (h, w) = (input.shape()[r - 2], input.shape()[r - 1]);
    let planes = input.len() / (h * w).max(1);
    let mut out = Vec::with_capacity(input.len() * 4);
    for p in 0..planes {
        let src = &input.data()[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            for x in 0..2 * w {
                out.push(row[x / 2]);
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[r - 2] = 2 * h;
    shape[r - 1] = 2 * w;
    Tensor::new(shape, out)
}

/// Gradient of [`nearest_upsample`]: sums each 2×2 block.
pub fn nearest_upsample_backward<T: Scalar>(grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let r = grad_output.rank();
    if r < 2 {
        return Err(Error::shape("nearest_upsample_backward", "need at least two spatial axes"));
    }
    let (h2, w2) = (grad_output.shape()[r - 2], grad_output.shape()[r - 1]);
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::shape(
            "nearest_upsample_backward",
            format!("spatial extent {h2}×{w2} is not even"),
        ));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let planes = grad_output.len() / (h2 * w2).max(1);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &grad_output.data()[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h2 {
            for x in 0..w2 {
                dst[(y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    let mut shape = grad_output.shape().to_vec();
    shape[r - 2] = h;
    shape[r - 1] = w;
    Tensor::new(shape, out)
}

#[derive(Clone, Debug, Default)]
pub struct NearestUpsample {
    seen_forward: bool,
}

impl<T: Scalar> Layer<T> for NearestUpsample {
    fn kind(&self) -> OpKind {
        OpKind::NearestUpsample
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.seen_forward = true;
        nearest_upsample(input)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.seen_forward {
            return Err(Error::BackwardBeforeForward { op: "nearest_upsample" });
        }
        nearest_upsample_backward(grad_output)
    }
}

/// Collapses everything after the batch axis.
#[derive(Clone, Debug, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> OpKind {
        OpKind::Flatten
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(&n) = input.shape().first() else {
            return Err(Error::shape("flatten", "rank-0 input"));
        };
        self.input_shape = Some(input.shape().to_vec());
        input.clone().reshape(vec![n, input.outer_stride()])
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self
            .input_shape
            .clone()
            .ok_or(Error::BackwardBeforeForward { op: "flatten" })?;
        grad_output.clone().reshape(shape)
    }
}
