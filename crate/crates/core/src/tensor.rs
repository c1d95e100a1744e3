//! Dense row-major tensors.
//!
//! Activations use the `feature × height × width` layout; batched data puts
//! the sample axis first. Storage is single precision by default, and every
//! operation is generic over [`Scalar`] so gradient checks can run in `f64`.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Element type of a [`Tensor`].
pub trait Scalar:
    Float + Default + Debug + AddAssign + SubAssign + MulAssign + std::iter::Sum + Send + Sync + 'static
{
    /// `c = alpha * a(m×k) * b(k×n) + beta * c(m×n)`, with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

fn strided_extent(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= strided_extent(m, k, rsa, csa));
                assert!(b.len() >= strided_extent(k, n, rsb, csb));
                assert!(c.len() >= strided_extent(m, n, rsc, csc));
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above bound every strided access inside
                // the three slices, and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major matrix product helper.
///
/// `a` is `m×k` (or `k×m` when `trans_a`), `b` is `k×n` (or `n×k` when
/// `trans_b`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    T::gemm_strided(
        m,
        k,
        n,
        T::one(),
        a,
        rsa,
        csa,
        b,
        rsb,
        csb,
        beta,
        c,
        n as isize,
        1,
    );
}

/// An n-dimensional dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!(
                    "shape {:?} holds {} values but {} were supplied",
                    shape,
                    expected,
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Gaussian samples with mean zero and the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(z * std)
        })
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Self {
        Self::from_fn(shape, |_| T::lit(rng.random_range(lo..hi)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::lit(x.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Size of one slice along the leading axis.
    pub fn outer_stride(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Borrow slice `i` along the leading axis.
    pub fn outer(&self, i: usize) -> &[T] {
        let s = self.outer_stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.outer_stride();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Copy slice `i` along the leading axis out as its own tensor.
    pub fn slice_outer(&self, i: usize) -> Result<Self> {
        let Some(&n) = self.shape.first() else {
            return Err(Error::shape("slice_outer", "rank-0 tensor has no outer axis"));
        };
        if i >= n {
            return Err(Error::shape(
                "slice_outer",
                format!("index {i} out of range for leading extent {n}"),
            ));
        }
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.outer(i).to_vec(),
        })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::shape("stack", "nothing to stack"));
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} does not match {:?}", t.shape, first.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Squared L2 distance, accumulated in `f64`.
    pub fn sq_dist(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(
                "sq_dist",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a.to_f64_lossy() - b.to_f64_lossy();
                d * d
            })
            .sum())
    }

    /// Whether both tensors have equal shapes and bit-identical values.
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool
    where
        T: BitRepr,
    {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }
}

/// Raw bit pattern access, for bit-exact comparisons.
pub trait BitRepr {
    fn bits(&self) -> u64;
}

impl BitRepr for f32 {
    fn bits(&self) -> u64 {
        self.to_bits() as u64
    }
}

impl BitRepr for f64 {
    fn bits(&self) -> u64 {
        self.to_bits()
    }
}
