use crate::error::{Error, Result};
use crate::ops::{Layer, OpKind};
use crate::tensor::{gemm, Scalar, Tensor};

fn check<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize, bool)> {
    let &[n_out, n_in] = weight.shape() else {
        return Err(Error::shape(
            "linear",
            format!("weight must be [N_out, N_in], got {:?}", weight.shape()),
        ));
    };
    let (batch, width, batched) = match *input.shape() {
        [w] => (1, w, false),
        [b, w] => (b, w, true),
        _ => {
            return Err(Error::shape(
                "linear",
                format!("input must be [N_in] or [B, N_in], got {:?}", input.shape()),
            ))
        }
    };
    if width != n_in {
        return Err(Error::shape(
            "linear",
            format!("input width {width} does not match weight N_in {n_in}"),
        ));
    }
    Ok((batch, n_in, n_out, batched))
}

/// Affine map `weight · input + bias` on `[N_in]` or `[B, N_in]` input.
pub fn linear<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, n_in, n_out, batched) = check(input, weight)?;
    if bias.shape() != [n_out] {
        return Err(Error::shape(
            "linear",
            format!("bias must be [{n_out}], got {:?}", bias.shape()),
        ));
    }
    let mut out = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    gemm(false, true, batch, n_in, n_out, input.data(), weight.data(), T::one(), &mut out);
    let shape = if batched { vec![batch, n_out] } else { vec![n_out] };
    Tensor::new(shape, out)
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (batch, n_in, n_out, _) = check(input, weight)?;
    if grad_output.len() != batch * n_out {
        return Err(Error::shape(
            "linear_backward",
            format!("grad_output {:?} for batch {batch} × {n_out}", grad_output.shape()),
        ));
    }
    let mut gw = Tensor::zeros(vec![n_out, n_in]);
    let mut gb = Tensor::zeros(vec![n_out]);
    let mut gi = Tensor::zeros(input.shape().to_vec());
    accumulate(
        batch,
        n_in,
        n_out,
        input.data(),
        weight.data(),
        grad_output.data(),
        gw.data_mut(),
        gb.data_mut(),
        gi.data_mut(),
    );
    Ok(LinearGrads {
        input: gi,
        weight: gw,
        bias: gb,
    })
}

#[allow(clippy::too_many_arguments)]
fn accumulate<T: Scalar>(
    batch: usize,
    n_in: usize,
    n_out: usize,
    x: &[T],
    w: &[T],
    go: &[T],
    gw: &mut [T],
    gb: &mut [T],
    gi: &mut [T],
) {
    gemm(true, false, n_out, batch, n_in, go, x, T::one(), gw);
    for row in go.chunks_exact(n_out) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    gemm(false, false, batch, n_out, n_in, go, w, T::zero(), gi);
}

/// Fully connected layer.
#[derive(Clone, Debug)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(
                "linear",
                format!("weight {:?} / bias {:?} do not agree", weight.shape(), bias.shape()),
            ));
        }
        Ok(Linear {
            grad_weight: Tensor::zeros(weight.shape().to_vec()),
            grad_bias: Tensor::zeros(bias.shape().to_vec()),
            weight,
            bias,
            cached_input: None,
        })
    }

    /// Gaussian weights with std `1/sqrt(n_in)` and zero bias.
    pub fn init<R: rand::Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let weight = Tensor::randn(vec![n_out, n_in], 1.0 / (n_in as f64).sqrt(), rng);
        Self::new(weight, Tensor::zeros(vec![n_out])).expect("consistent by construction")
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn kind(&self) -> OpKind {
        OpKind::Linear
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = linear(input, &self.weight, &self.bias)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward { op: "linear" })?;
        let (batch, n_in, n_out, _) = check(input, &self.weight)?;
        if grad_output.len() != batch * n_out {
            return Err(Error::shape(
                "linear_backward",
                format!("grad_output {:?} for batch {batch} × {n_out}", grad_output.shape()),
            ));
        }
        let mut gi = Tensor::zeros(input.shape().to_vec());
        accumulate(
            batch,
            n_in,
            n_out,
            input.data(),
            self.weight.data(),
            grad_output.data(),
            self.grad_weight.data_mut(),
            self.grad_bias.data_mut(),
            gi.data_mut(),
        );
        Ok(gi)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn grads(&self) -> Vec<&Tensor<T>> {
        vec![&self.grad_weight, &self.grad_bias]
    }

    fn zero_grad(&mut self) {
        self.grad_weight.fill(T::zero());
        self.grad_bias.fill(T::zero());
    }
}
