use crate::error::{Error, Result};
use crate::ops::{Layer, OpKind};
use crate::tensor::{Scalar, Tensor};

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, negative_slope: T) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { x } else { negative_slope * x })
}

pub fn leaky_relu_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_output: &Tensor<T>,
    negative_slope: T,
) -> Result<Tensor<T>> {
    if input.shape() != grad_output.shape() {
        return Err(Error::shape(
            "leaky_relu_backward",
            format!("input {:?} vs grad {:?}", input.shape(), grad_output.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x >= T::zero() { g } else { negative_slope * g })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

pub fn tanh<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| x.tanh())
}

#[derive(Clone, Debug)]
pub struct LeakyRelu<T: Scalar = f32> {
    pub negative_slope: T,
    cached_input: Option<Tensor<T>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(negative_slope: T) -> Result<Self> {
        if !(negative_slope >= T::zero() && negative_slope < T::one()) {
            return Err(Error::InvalidArgument(format!(
                "negative slope must lie in [0, 1), got {negative_slope:?}"
            )));
        }
        Ok(LeakyRelu {
            negative_slope,
            cached_input: None,
        })
    }
}

impl<T: Scalar> Layer<T> for LeakyRelu<T> {
    fn kind(&self) -> OpKind {
        OpKind::LeakyRelu
    }

    fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.cached_input = Some(input.clone());
        Ok(leaky_relu(input, self.negative_slope))
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(Error::BackwardBeforeForward { op: "leaky_relu" })?;
        leaky_relu_backward(input, grad_output, self.negative_slope)
    }
}
