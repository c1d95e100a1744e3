use crate::error::{Error, Result};
use crate::ops::{Layer, OpKind};
use crate::tensor::{Scalar, Tensor};

/// Softmax over a single logit vector, computed with max-subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_at<T: Scalar>(logits: &[T], target: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = logits.iter().map(|&z| (z - max).exp()).sum();
    logits[target] - max - total.ln()
}

fn check_target(k: usize, target: usize) -> Result<()> {
    if target >= k {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range for {k} logits"
        )));
    }
    Ok(())
}

/// `-log softmax(logits)[target]` for one logit vector.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<T> {
    if logits.rank() != 1 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("expected [K] logits, got {:?}", logits.shape()),
        ));
    }
    check_target(logits.len(), target)?;
    Ok(-log_softmax_at(logits.data(), target))
}

/// `softmax(logits) - one_hot(target)`.
pub fn softmax_cross_entropy_backward<T: Scalar>(logits: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    check_target(logits.len(), target)?;
    let mut g = softmax(logits.data());
    g[target] -= T::one();
    Tensor::new(logits.shape().to_vec(), g)
}

/// Mean softmax cross-entropy over a `[B, K]` batch, as a layer whose
/// output is the scalar loss (shape `[1]`).
#[derive(Clone, Debug)]
pub struct SoftmaxCrossEntropy<T: Scalar = f32> {
    targets: Vec<usize>,
    cached_logits: Option<Tensor<T>>,
}

impl<T: Scalar> SoftmaxCrossEntropy<T> {
    pub fn new(targets: Vec<usize>) -> Self {
        SoftmaxCrossEntropy {
            targets,
            cached_logits: None,
        }
    }

    pub fn set_targets(&mut self, targets: Vec<usize>) {
        self.targets = targets;
        self.cached_logits = None;
    }

    fn split(&self, logits: &Tensor<T>) -> Result<(usize, usize)> {
        let (b, k) = match *logits.shape() {
            [k] => (1, k),
            [b, k] => (b, k),
            _ => {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("expected [B, K] logits, got {:?}", logits.shape()),
                ))
            }
        };
        if b != self.targets.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{b} logit rows but {} targets", self.targets.len()),
            ));
        }
        for &t in &self.targets {
            check_target(k, t)?;
        }
        Ok((b, k))
    }
}

impl<T: Scalar> Layer<T> for SoftmaxCrossEntropy<T> {
    fn kind(&self) -> OpKind {
        OpKind::SoftmaxCrossEntropy
    }

    fn forward(&mut self, logits: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, k) = self.split(logits)?;
        let total: T = (0..b)
            .map(|i| -log_softmax_at(&logits.data()[i * k..(i + 1) * k], self.targets[i]))
            .sum();
        self.cached_logits = Some(logits.clone());
        Tensor::new(vec![1], vec![total / T::lit(b as f64)])
    }

    fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self
            .cached_logits
            .as_ref()
            .ok_or(Error::BackwardBeforeForward { op: "softmax_cross_entropy" })?;
        if grad_output.len() != 1 {
            return Err(Error::shape(
                "softmax_cross_entropy_backward",
                format!("loss gradient must be a scalar, got {:?}", grad_output.shape()),
            ));
        }
        let (b, k) = self.split(logits)?;
        let scale = grad_output.data()[0] / T::lit(b as f64);
        let mut out = Vec::with_capacity(b * k);
        for i in 0..b {
            let mut p = softmax(&logits.data()[i * k..(i + 1) * k]);
            p[self.targets[i]] -= T::one();
            out.extend(p.into_iter().map(|v| v * scale));
        }
        Tensor::new(logits.shape().to_vec(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let l = Tensor::full(vec![4], 0.3f64);
        let loss = softmax_cross_entropy(&l, 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let l = Tensor::new(vec![2], vec![1000.0f32, 0.0]).unwrap();
        let loss = softmax_cross_entropy(&l, 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        let g = softmax_cross_entropy_backward(&l, 0).unwrap();
        assert!(g.is_finite());
    }

    #[test]
    fn target_out_of_range() {
        let l = Tensor::<f32>::zeros(vec![3]);
        assert!(softmax_cross_entropy(&l, 3).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f32, -4.0, 30.0, 0.5]);
        let s: f32 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}
