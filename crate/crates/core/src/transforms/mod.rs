//! Deterministic transforms applied to individual activation maps.
//!
//! Each feature's `H×W` activation map is treated as a one-channel image.
//! Values outside `[-1, 1]` are legal and are never clamped.

mod affine;
mod morph;
mod pointwise;

pub use affine::{build_affine, warp_affine, AffineMatrix};
pub use morph::{disc_offsets, morph, MorphOp};
pub use pointwise::pointwise;

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reflection axis. `Horizontal` mirrors columns (x ↦ −x), `Vertical`
/// mirrors rows (y ↦ −y).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Horizontal => "horizontal",
            Axis::Vertical => "vertical",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TransformKind {
    Ablate,
    Invert,
    ScalarMultiply { factor: f64 },
    BinaryThreshold { threshold: f64 },
    Reflect { axis: Axis },
    Translate { dx: f64, dy: f64 },
    Scale { kx: f64, ky: f64 },
    /// Angle in degrees.
    Rotate { degrees: f64 },
    Erode { radius: u32 },
    Dilate { radius: u32 },
}

impl TransformKind {
    pub const NAMES: [&'static str; 10] = [
        "ablate",
        "invert",
        "scalar_multiply",
        "binary_threshold",
        "reflect",
        "translate",
        "scale",
        "rotate",
        "erode",
        "dilate",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Ablate => "ablate",
            TransformKind::Invert => "invert",
            TransformKind::ScalarMultiply { .. } => "scalar_multiply",
            TransformKind::BinaryThreshold { .. } => "binary_threshold",
            TransformKind::Reflect { .. } => "reflect",
            TransformKind::Translate { .. } => "translate",
            TransformKind::Scale { .. } => "scale",
            TransformKind::Rotate { .. } => "rotate",
            TransformKind::Erode { .. } => "erode",
            TransformKind::Dilate { .. } => "dilate",
        }
    }

    /// Number of parameters a transform of this name takes.
    pub fn arity(name: &str) -> Option<usize> {
        Some(match name {
            "ablate" | "invert" => 0,
            "scalar_multiply" | "binary_threshold" | "reflect" | "rotate" | "erode" | "dilate" => 1,
            "translate" | "scale" => 2,
            _ => return None,
        })
    }

    pub fn is_pointwise(&self) -> bool {
        matches!(
            self,
            TransformKind::Ablate
                | TransformKind::Invert
                | TransformKind::ScalarMultiply { .. }
                | TransformKind::BinaryThreshold { .. }
        )
    }

    pub fn is_affine(&self) -> bool {
        matches!(
            self,
            TransformKind::Reflect { .. }
                | TransformKind::Translate { .. }
                | TransformKind::Scale { .. }
                | TransformKind::Rotate { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{} {what} must be finite", self.name())))
            }
        };
        match *self {
            TransformKind::ScalarMultiply { factor } => finite(factor, "factor"),
            TransformKind::BinaryThreshold { threshold } => finite(threshold, "threshold"),
            TransformKind::Translate { dx, dy } => finite(dx, "p_x").and(finite(dy, "p_y")),
            TransformKind::Rotate { degrees } => finite(degrees, "angle"),
            TransformKind::Scale { kx, ky } => {
                if kx > 0.0 && ky > 0.0 && kx.is_finite() && ky.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "scale factors must be positive, got k_x={kx}, k_y={ky}"
                    )))
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformKind::Ablate | TransformKind::Invert => write!(f, "{}", self.name()),
            TransformKind::ScalarMultiply { factor } => write!(f, "scalar_multiply({factor})"),
            TransformKind::BinaryThreshold { threshold } => write!(f, "binary_threshold({threshold})"),
            TransformKind::Reflect { axis } => write!(f, "reflect({})", axis.name()),
            TransformKind::Translate { dx, dy } => write!(f, "translate({dx}, {dy})"),
            TransformKind::Scale { kx, ky } => write!(f, "scale({kx}, {ky})"),
            TransformKind::Rotate { degrees } => write!(f, "rotate({degrees})"),
            TransformKind::Erode { radius } => write!(f, "erode({radius})"),
            TransformKind::Dilate { radius } => write!(f, "dilate({radius})"),
        }
    }
}

/// Apply `kind` to one `H×W` map stored row-major in `map`.
pub(crate) fn transform_plane(map: &[f32], height: usize, width: usize, kind: &TransformKind) -> Result<Vec<f32>> {
    match kind {
        TransformKind::Erode { radius } => Ok(morph::morph_plane(map, height, width, MorphOp::Erode, *radius)),
        TransformKind::Dilate { radius } => Ok(morph::morph_plane(map, height, width, MorphOp::Dilate, *radius)),
        k if k.is_pointwise() => Ok(pointwise::pointwise_plane(map, k)),
        k => {
            let m = build_affine(k, height, width)?;
            affine::warp_plane(map, height, width, &m)
        }
    }
}

/// Apply one transform to an `[H, W]` map.
pub fn apply_to_map(map: &Tensor<f32>, kind: &TransformKind) -> Result<Tensor<f32>> {
    let &[h, w] = map.shape() else {
        return Err(Error::shape(
            "transform",
            format!("expected an [H, W] map, got {:?}", map.shape()),
        ));
    };
    kind.validate()?;
    Tensor::new(vec![h, w], transform_plane(map.data(), h, w, kind)?)
}

/// Transform the selected feature maps of an `[F, H, W]` activation tensor;
/// unselected maps are copied unchanged.
pub fn apply_to_features(activations: &Tensor<f32>, selected: &[usize], kind: &TransformKind) -> Result<Tensor<f32>> {
    let &[f, h, w] = activations.shape() else {
        return Err(Error::shape(
            "apply_to_features",
            format!("expected [F, H, W] activations, got {:?}", activations.shape()),
        ));
    };
    if let Some(&bad) = selected.iter().find(|&&i| i >= f) {
        return Err(Error::InvalidArgument(format!(
            "feature index {bad} out of range for {f} features"
        )));
    }
    kind.validate()?;
    let mut out = activations.clone();
    let mut done = vec![false; f];
    for &i in selected {
        if std::mem::replace(&mut done[i], true) {
            continue;
        }
        let plane = transform_plane(activations.outer(i), h, w, kind)?;
        out.outer_mut(i).copy_from_slice(&plane);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acts() -> Tensor<f32> {
        Tensor::from_fn(vec![3, 4, 4], |i| (i as f32 * 0.37).sin())
    }

    #[test]
    fn empty_selection_is_identity() {
        let a = acts();
        let out = apply_to_features(&a, &[], &TransformKind::Rotate { degrees: 30.0 }).unwrap();
        assert!(out.bit_eq(&a));
    }

    #[test]
    fn ablate_everything() {
        let out = apply_to_features(&acts(), &[0, 1, 2], &TransformKind::Ablate).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invert_only_selected_map() {
        let a = acts();
        let out = apply_to_features(&a, &[0], &TransformKind::Invert).unwrap();
        for (x, y) in a.outer(0).iter().zip(out.outer(0)) {
            assert_eq!(*y, 1.0 - x);
        }
        for i in 1..3 {
            assert!(out.slice_outer(i).unwrap().bit_eq(&a.slice_outer(i).unwrap()));
        }
    }

    #[test]
    fn out_of_range_index() {
        assert!(apply_to_features(&acts(), &[3], &TransformKind::Invert).is_err());
    }

    #[test]
    fn arity_table_covers_every_name() {
        for n in TransformKind::NAMES {
            assert!(TransformKind::arity(n).is_some(), "{n}");
        }
        assert_eq!(TransformKind::arity("blur"), None);
    }

    #[test]
    fn scale_must_be_positive() {
        assert!(TransformKind::Scale { kx: 0.0, ky: 1.0 }.validate().is_err());
        let m = Tensor::<f32>::zeros(vec![4, 4]);
        assert!(apply_to_map(&m, &TransformKind::Scale { kx: 0.6, ky: 0.0 }).is_err());
    }
}
