//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    /// 100 epochs at lr 1e-4 with β₁ = 0.9, β₂ = 0.999.
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
        }
    }
}

impl OptimizerConfig {
    /// `lr >= 0`, `0 <= beta < 1`, `epsilon > 0`. A zero learning rate is
    /// a frozen run: moments update, parameters do not.
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::InvalidArgument(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar = f32> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(params: &[&Tensor<T>]) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }
}

/// One Adam update. `step_index` starts at 1.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    config: &OptimizerConfig,
    step_index: u64,
) -> Result<()> {
    if step_index == 0 {
        return Err(Error::InvalidArgument("Adam step index starts at 1".into()));
    }
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {}/{} moment tensors",
                params.len(),
                grads.len(),
                state.first_moment.len(),
                state.second_moment.len()
            ),
        ));
    }
    for (i, ((p, g), (m, v))) in params
        .iter()
        .zip(grads)
        .zip(state.first_moment.iter().zip(&state.second_moment))
        .enumerate()
    {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "parameter {i}: param {:?}, grad {:?}, moments {:?}/{:?}",
                    p.shape(),
                    g.shape(),
                    m.shape(),
                    v.shape()
                ),
            ));
        }
    }

    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let one = T::one();
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.epsilon);
    let c1 = T::lit(1.0 - config.beta1.powi(step_index as i32));
    let c2 = T::lit(1.0 - config.beta2.powi(step_index as i32));

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Adam state plus its step counter.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    pub config: OptimizerConfig,
    pub state: AdamState<T>,
    pub steps_taken: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: OptimizerConfig, params: &[&Tensor<T>]) -> Self {
        Adam {
            config,
            state: AdamState::for_params(params),
            steps_taken: 0,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        adam_step(params, grads, &mut self.state, &self.config, self.steps_taken + 1)?;
        self.steps_taken += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 1e3] {
            let mut w = scalar(0.5);
            let grad = scalar(g);
            let cfg = OptimizerConfig {
                learning_rate: 0.01,
                ..Default::default()
            };
            let mut st = AdamState::for_params(&[&w]);
            adam_step(&mut [&mut w], &[&grad], &mut st, &cfg, 1).unwrap();
            let moved = 0.5 - w.data()[0];
            let expected = 0.01 * g / (g.abs() + cfg.epsilon);
            assert!((moved - expected).abs() < 1e-12);
            assert!((moved.abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_leaves_params_untouched() {
        let mut w = Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap();
        let before = w.clone();
        let g = Tensor::zeros(vec![3]);
        let mut adam = Adam::new(OptimizerConfig::default(), &[&w]);
        for _ in 0..50 {
            adam.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert!(w.bit_eq(&before));
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut w = Tensor::<f32>::zeros(vec![2]);
        let g = Tensor::<f32>::zeros(vec![3]);
        let mut st = AdamState::for_params(&[&w]);
        let err = adam_step(&mut [&mut w], &[&g], &mut st, &OptimizerConfig::default(), 1);
        assert!(err.is_err());
        let g = Tensor::<f32>::zeros(vec![2]);
        assert!(adam_step(&mut [&mut w], &[&g], &mut st, &OptimizerConfig::default(), 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig {
            beta2: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            learning_rate: -1e-3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
