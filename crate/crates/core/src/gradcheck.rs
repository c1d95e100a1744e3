//! Central-difference gradient checking in double precision.
//!
//! The node's output is reduced to a scalar with a fixed random projection
//! `L = Σ r ⊙ forward(x)`, so `backward(r)` must reproduce `∂L/∂x` and the
//! accumulated parameter gradients must reproduce `∂L/∂θ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::Layer;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// Where the largest error occurred, e.g. `param 0 [12]`.
    pub worst: String,
    pub coordinates_checked: usize,
}

/// Error per coordinate is `|a − n| / max(|n|, 1e-3·max|n|, 1e-7)` so that
/// near-zero entries of a tensor are judged against the tensor's scale.
fn compare(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-7);
    let mut worst = (0.0, 0);
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = (a - n).abs() / n.abs().max(floor);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

fn projected_loss(node: &mut dyn Layer<f64>, input: &Tensor<f64>, projection: &Tensor<f64>) -> Result<f64> {
    let out = node.forward(input)?;
    Ok(out.data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
}

/// Compare analytic gradients of `node` at `input` with central differences
/// over every input and parameter coordinate.
pub fn finite_difference_check(
    node: &mut dyn Layer<f64>,
    input: &Tensor<f64>,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = node.forward(input)?;
    let projection = Tensor::<f64>::rand_uniform(out.shape().to_vec(), -1.0, 1.0, &mut rng);

    node.zero_grad();
    node.forward(input)?;
    let grad_input = node.backward(&projection)?;
    let param_grads: Vec<Tensor<f64>> = node.grads().into_iter().cloned().collect();

    let mut max_rel_err = 0.0;
    let mut worst = String::from("none");
    let mut checked = 0;

    let mut probe = input.clone();
    let mut numeric = vec![0.0; input.len()];
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = projected_loss(node, &probe, &projection)?;
        probe.data_mut()[i] = orig - STEP;
        let down = projected_loss(node, &probe, &projection)?;
        probe.data_mut()[i] = orig;
        numeric[i] = (up - down) / (2.0 * STEP);
    }
    checked += numeric.len();
    let (e, at) = compare(grad_input.data(), &numeric);
    if e > max_rel_err {
        max_rel_err = e;
        worst = format!("input [{at}]");
    }

    for (p, analytic) in param_grads.iter().enumerate() {
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = node.params()[p].data()[i];
            node.params_mut()[p].data_mut()[i] = orig + STEP;
            let up = projected_loss(node, input, &projection)?;
            node.params_mut()[p].data_mut()[i] = orig - STEP;
            let down = projected_loss(node, input, &projection)?;
            node.params_mut()[p].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        checked += numeric.len();
        let (e, at) = compare(analytic.data(), &numeric);
        if e > max_rel_err {
            max_rel_err = e;
            worst = format!("param {p} [{at}]");
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        pass: max_rel_err < tolerance,
        worst,
        coordinates_checked: checked,
    })
}
