use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transforms::TransformKind;

pub(crate) fn pointwise_plane(map: &[f32], kind: &TransformKind) -> Vec<f32> {
    match *kind {
        TransformKind::Ablate => vec![0.0; map.len()],
        TransformKind::Invert => map.iter().map(|&x| 1.0 - x).collect(),
        TransformKind::ScalarMultiply { factor } => {
            let p = factor as f32;
            map.iter().map(|&x| x * p).collect()
        }
        TransformKind::BinaryThreshold { threshold } => map
            .iter()
            .map(|&x| if x as f64 >= threshold { 1.0 } else { 0.0 })
            .collect(),
        _ => unreachable!("not a pointwise transform"),
    }
}

/// Elementwise transforms: ablation `0`, inversion `1 − x`, scaling `x·p`
/// and binary thresholding `x ≥ t`.
pub fn pointwise(map: &Tensor<f32>, kind: &TransformKind) -> Result<Tensor<f32>> {
    if !kind.is_pointwise() {
        return Err(Error::InvalidArgument(format!("{} is not a pointwise transform", kind.name())));
    }
    kind.validate()?;
    Tensor::new(map.shape().to_vec(), pointwise_plane(map.data(), kind))
}
