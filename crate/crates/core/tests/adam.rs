use nbend_core::optim::{adam_step, Adam, AdamState, OptimizerConfig};
use nbend_core::Tensor;
use proptest::prelude::*;

/// Textbook scalar Adam, written out longhand.
fn reference_adam(w0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(w);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        w -= lr * m_hat / (v_hat.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn quadratic_trajectory_matches_reference() {
    let cfg = OptimizerConfig {
        learning_rate: 0.1,
        ..Default::default()
    };
    let expected = reference_adam(1.0, |w| 2.0 * w, 0.1, 5);
    let mut w = Tensor::<f64>::new(vec![1], vec![1.0]).unwrap();
    let mut adam = Adam::new(cfg, &[&w]);
    for e in expected {
        let g = w.map(|v| 2.0 * v);
        adam.step(&mut [&mut w], &[&g]).unwrap();
        assert!((w.data()[0] - e).abs() < 1e-6, "{} vs {e}", w.data()[0]);
    }
    assert_eq!(adam.steps_taken, 5);
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut w = Tensor::<f32>::zeros(vec![3]);
    let g = Tensor::<f32>::zeros(vec![2]);
    let mut st = AdamState::for_params(&[&w]);
    assert!(adam_step(&mut [&mut w], &[&g], &mut st, &OptimizerConfig::default(), 1).is_err());
    let g = Tensor::<f32>::zeros(vec![3]);
    assert!(adam_step(&mut [&mut w], &[&g], &mut st, &OptimizerConfig::default(), 0).is_err());
}

#[test]
fn frozen_run_keeps_weights() {
    let cfg = OptimizerConfig {
        learning_rate: 0.0,
        ..Default::default()
    };
    let mut w = Tensor::<f32>::new(vec![2], vec![0.25, -3.0]).unwrap();
    let before = w.clone();
    let g = Tensor::<f32>::new(vec![2], vec![1.0, -0.5]).unwrap();
    let mut adam = Adam::new(cfg, &[&w]);
    for _ in 0..10 {
        adam.step(&mut [&mut w], &[&g]).unwrap();
    }
    assert!(w.bit_eq(&before));
}

proptest! {
    #[test]
    fn steps_are_bit_deterministic(ws in proptest::collection::vec(-5.0f32..5.0, 1..20), seed in 0u64..1000) {
        let gs: Vec<f32> = ws.iter().enumerate().map(|(i, w)| (w * (i as f32 + 1.0) + seed as f32 * 1e-3).sin()).collect();
        let run = || {
            let mut w = Tensor::<f32>::new(vec![ws.len()], ws.clone()).unwrap();
            let g = Tensor::<f32>::new(vec![gs.len()], gs.clone()).unwrap();
            let mut adam = Adam::new(OptimizerConfig::default(), &[&w]);
            for _ in 0..3 {
                adam.step(&mut [&mut w], &[&g]).unwrap();
            }
            w
        };
        prop_assert!(run().bit_eq(&run()));
    }

    #[test]
    fn first_step_moves_about_lr(g in prop_oneof![-100.0f64..-1e-3, 1e-3f64..100.0]) {
        let mut w = Tensor::<f64>::new(vec![1], vec![0.0]).unwrap();
        let grad = Tensor::<f64>::new(vec![1], vec![g]).unwrap();
        let mut st = AdamState::for_params(&[&w]);
        adam_step(&mut [&mut w], &[&grad], &mut st, &OptimizerConfig::default(), 1).unwrap();
        prop_assert!((w.data()[0].abs() - 1e-4).abs() < 1e-8);
        prop_assert!(w.data()[0].signum() == -g.signum());
    }
}
