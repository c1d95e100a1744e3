use crate::error::{Error, Result};
use crate::ops::{Layer, OpKind};
use crate::tensor::{gemm, Scalar, Tensor};

/// Output extent of a convolution along one axis (floor semantics).
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.c_out * self.ho * self.wo
    }

    /// Whether the im2col matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Validate shapes; returns the geometry and the batch size (`None` when the
/// input is a single `[C,H,W]` sample).
fn geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<(Geom, Option<usize>)> {
    let (batch, c_in, h, w) = match *input.shape() {
        [c, h, w] => (None, c, h, w),
        [n, c, h, w] => (Some(n), c, h, w),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("input rank must be 3 or 4, got shape {:?}", input.shape()),
            ))
        }
    };
    let &[c_out, wc_in, kh, kw] = weight.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("weight must be [C_out, C_in, kh, kw], got {:?}", weight.shape()),
        ));
    };
    if wc_in != c_in {
        return Err(Error::shape(
            "conv2d",
            format!("input channels: input has {c_in}, weight expects {wc_in}"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias length: expected [{c_out}], got {:?}", b.shape()),
            ));
        }
    }
    let ho = conv_output_extent(h, kh, stride, pad).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("height: {h} with padding {pad}, kernel {kh}, stride {stride} leaves no output"),
        )
    })?;
    let wo = conv_output_extent(w, kw, stride, pad).ok_or_else(|| {
        Error::shape(
            "conv2d",
            format!("width: {w} with padding {pad}, kernel {kw}, stride {stride} leaves no output"),
        )
    })?;
    Ok((
        Geom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        },
        batch,
    ))
}

fn im2col<T: Scalar>(g: &Geom, input: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let src = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &Geom, cols: &[T], grad_in: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c_in {
        let dst = &mut grad_in[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn forward_sample<T: Scalar>(g: &Geom, input: &[T], weight: &[T], bias: &[T], cols: &mut Vec<T>, out: &mut [T]) {
    let plane = g.out_plane();
    for (co, b) in bias.iter().enumerate() {
        out[co * plane..(co + 1) * plane].fill(*b);
    }
    let cols: &[T] = if g.is_pointwise() {
        input
    } else {
        cols.resize(g.patch() * plane, T::zero());
        im2col(g, input, cols);
        cols
    };
    gemm(false, false, g.c_out, g.patch(), plane, weight, cols, T::one(), out);
}

/// 2-D cross-correlation of `[C_in,H,W]` (or batched `[N,C_in,H,W]`) input.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, batch) = geometry(input, weight, Some(bias), stride, padding)?;
    let n = batch.unwrap_or(1);
    let mut out = vec![T::zero(); n * g.out_len()];
    let mut cols = Vec::new();
    for s in 0..n {
        forward_sample(
            &g,
            &input.data()[s * g.in_len()..(s + 1) * g.in_len()],
            weight.data(),
            bias.data(),
            &mut cols,
            &mut out[s * g.out_len()..(s + 1) * g.out_len()],
        );
    }
    let shape = match batch {
        Some(n) => vec![n, g.c_out, g.ho, g.wo],
        None => vec![g.c_out, g.ho, g.wo],
    };
    Tensor::new(shape, out)
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_output: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (g, batch) = geometry(input, weight, None, stride, padding)?;
    let expected: Vec<usize> = match batch {
        Some(n) => vec![n, g.c_out, g.ho, g.wo],
        None => vec![g.c_out, g.ho, g.wo],
    };
    if grad_output.shape() != expected.as_slice() {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_output is {:?}, expected {:?}", grad_output.shape(), expected),
        ));
    }
    let mut grad_w = Tensor::zeros(weight.shape().to_vec());
    let mut grad_b = Tensor::zeros(vec![g.c_out]);
    let mut grad_in = Tensor::zeros(input.shape().to_vec());
    accumulate_backward(
        &g,
        batch.unwrap_or(1),
        input.data(),
        weight.data(),
        grad_output.data(),
        grad_w.data_mut(),
        grad_b.data_mut(),
        grad_in.data_mut(),
    );
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

#[allow(clippy::too_many_arguments)]
fn accumulate_backward<T: Scalar>(
    g: &Geom,
    n: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    grad_in: &mut [T],
) {
    let plane = g.out_plane();
    let patch = g.patch();
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { patch * plane }];
    let mut grad_cols = vec![T::zero(); patch * plane];
    for s in 0..n {
        let x = &input[s * g.in_len()..(s + 1) * g.in_len()];
        let go = &grad_out[s * g.out_len()..(s + 1) * g.out_len()];
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += go[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        let cols_ref: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        gemm(false, true, g.c_out, plane, patch, go, cols_ref, T::one(), grad_w);
        let gi = &mut grad_in[s * g.in_len()..(s + 1) * g.in_len()];
        if g.is_pointwise() {
            gemm(true, false, patch, g.c_out, plane, weight, go, T::one(), gi);
        } else {
            gemm(true, false, patch, g.c_out, plane, weight, go, T::zero(), &mut grad_cols);
            col2im_add(g, &grad_cols, gi);
        }
    }
}

/// Convolution layer over batched `[N,C,H,W]` input.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        if weight.rank() != 4 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("weight {:?} / bias {:?} do not agree", weight.shape(), bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        Ok(Conv2d {
            grad_weight: Tensor::zeros(weight.shape().to_vec()),
            grad_bias: Tensor::zeros(bias.shape().to_vec()),
            weight,
            bias,
            stride,
            padding,
            cached_input: None,
        })
    }

    /// Gaussian weights with std `1/sqrt(fan_in)` and zero bias.
    pub fn init<R: rand::Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (c_in * kernel * kernel) as f64;
        let weight = Tensor::randn(vec![c_out, c_in, kernel, kernel], 1.0 / fan_in.sqrt(), rng);
        Self::new(weight, Tensor::zeros(vec![c_out]), stride, padding)
            .expect("shapes are consistent by construction")
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> OpKind {
        OpKind::Conv2d
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = conv2d(input, &self.weight, &self.bias, self.stride, self.padding)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward { op: "conv2d" })?;
        let (g, batch) = geometry(input, &self.weight, None, self.stride, self.padding)?;
        let n = batch.unwrap_or(1);
        if grad_output.len() != n * g.out_len() {
            return Err(Error::shape(
                "conv2d_backward",
                format!("grad_output has shape {:?}", grad_output.shape()),
            ));
        }
        let mut grad_in = Tensor::zeros(input.shape().to_vec());
        accumulate_backward(
            &g,
            n,
            input.data(),
            self.weight.data(),
            grad_output.data(),
            self.grad_weight.data_mut(),
            self.grad_bias.data_mut(),
            grad_in.data_mut(),
        );
        Ok(grad_in)
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
