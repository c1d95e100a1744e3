use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transforms::{Axis, TransformKind};

/// Homogeneous 2-D affine matrix acting on `(x, y, 1)` column vectors,
/// with `x` the column and `y` the row coordinate. The last row is always
/// `(0, 0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMatrix(pub [[f64; 3]; 3]);

impl AffineMatrix {
    pub const IDENTITY: AffineMatrix = AffineMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_linear(a: f64, b: f64, c: f64, d: f64, tx: f64, ty: f64) -> Self {
        AffineMatrix([[a, b, tx], [c, d, ty], [0.0, 0.0, 1.0]])
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_linear(1.0, 0.0, 0.0, 1.0, tx, ty)
    }

    pub fn compose(&self, rhs: &AffineMatrix) -> AffineMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        AffineMatrix(out)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Result<AffineMatrix> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::InvalidArgument(format!("affine matrix is singular (det = {det})")));
        }
        let m = &self.0;
        let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        let (tx, ty) = (m[0][2], m[1][2]);
        Ok(AffineMatrix::from_linear(
            ia,
            ib,
            ic,
            id,
            -(ia * tx + ib * ty),
            -(ic * tx + id * ty),
        ))
    }
}

/// The matrix for an affine transform on an `height × width` map.
///
/// Reflection, scaling and rotation act about the map centre
/// `((W−1)/2, (H−1)/2)`; translation is applied as is.
pub fn build_affine(kind: &TransformKind, height: usize, width: usize) -> Result<AffineMatrix> {
    let core = match *kind {
        TransformKind::Translate { dx, dy } => return Ok(AffineMatrix::translation(dx, dy)),
        TransformKind::Reflect { axis: Axis::Horizontal } => AffineMatrix::from_linear(-1.0, 0.0, 0.0, 1.0, 0.0, 0.0),
        TransformKind::Reflect { axis: Axis::Vertical } => AffineMatrix::from_linear(1.0, 0.0, 0.0, -1.0, 0.0, 0.0),
        TransformKind::Scale { kx, ky } => {
            if !(kx > 0.0 && ky > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "scale factors must be positive, got k_x={kx}, k_y={ky}"
                )));
            }
            AffineMatrix::from_linear(kx, 0.0, 0.0, ky, 0.0, 0.0)
        }
        TransformKind::Rotate { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            AffineMatrix::from_linear(c, -s, s, c, 0.0, 0.0)
        }
        ref other => {
            return Err(Error::InvalidArgument(format!("{} is not an affine transform", other.name())));
        }
    };
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    Ok(AffineMatrix::translation(cx, cy)
        .compose(&core)
        .compose(&AffineMatrix::translation(-cx, -cy)))
}

/// Bilinear sample with zero outside the map. Neighbours with zero weight
/// are never read, so integer coordinates reproduce pixels exactly.
fn sample(map: &[f32], height: usize, width: usize, x: f64, y: f64) -> f32 {
    let px = |yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= height as isize || xx >= width as isize {
            0.0
        } else {
            map[yy as usize * width + xx as usize] as f64
        }
    };
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let row = |yy: isize| {
        if fx == 0.0 {
            px(yy, x0)
        } else {
            px(yy, x0) * (1.0 - fx) + px(yy, x0 + 1) * fx
        }
    };
    let v = if fy == 0.0 {
        row(y0)
    } else {
        row(y0) * (1.0 - fy) + row(y0 + 1) * fy
    };
    v as f32
}

pub(crate) fn warp_plane(map: &[f32], height: usize, width: usize, m: &AffineMatrix) -> Result<Vec<f32>> {
    let inv = m.inverse()?;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            out.push(sample(map, height, width, sx, sy));
        }
    }
    Ok(out)
}

/// Inverse-mapping warp: `out(y, x) = bilinear(map, M⁻¹·(x, y, 1))`.
pub fn warp_affine(map: &Tensor<f32>, m: &AffineMatrix) -> Result<Tensor<f32>> {
    let &[h, w] = map.shape() else {
        return Err(Error::shape("warp_affine", format!("expected [H, W], got {:?}", map.shape())));
    };
    Tensor::new(vec![h, w], warp_plane(map.data(), h, w, m)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &AffineMatrix, b: &AffineMatrix) -> bool {
        a.0.iter().flatten().zip(b.0.iter().flatten()).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn zero_rotation_is_identity() {
        let m = build_affine(&TransformKind::Rotate { degrees: 0.0 }, 8, 8).unwrap();
        assert!(close(&m, &AffineMatrix::IDENTITY));
    }

    #[test]
    fn rotation_45_about_centre() {
        let m = build_affine(&TransformKind::Rotate { degrees: 45.0 }, 9, 9).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.0[0][0] - h).abs() < 1e-12 && (m.0[0][1] + h).abs() < 1e-12);
        assert!((m.0[1][0] - h).abs() < 1e-12 && (m.0[1][1] - h).abs() < 1e-12);
        let (cx, cy) = m.apply(4.0, 4.0);
        assert!((cx - 4.0).abs() < 1e-12 && (cy - 4.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_scale_about_centre() {
        let m = build_affine(&TransformKind::Scale { kx: 0.6, ky: 0.6 }, 16, 16).unwrap();
        assert_eq!((m.0[0][0], m.0[1][1], m.0[0][1], m.0[1][0]), (0.6, 0.6, 0.0, 0.0));
        let (cx, cy) = m.apply(7.5, 7.5);
        assert!((cx - 7.5).abs() < 1e-12 && (cy - 7.5).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = Tensor::<f32>::zeros(vec![2, 2]);
        let sing = AffineMatrix::from_linear(1.0, 2.0, 2.0, 4.0, 0.0, 0.0);
        assert!(warp_affine(&m, &sing).is_err());
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Tensor::<f32>::randn(vec![7, 5], 3.0, &mut rng);
        assert!(warp_affine(&m, &AffineMatrix::IDENTITY).unwrap().bit_eq(&m));
    }

    #[test]
    fn unit_translation_shifts_in_zeros() {
        let m = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let t = build_affine(&TransformKind::Translate { dx: 1.0, dy: 0.0 }, 2, 2).unwrap();
        assert_eq!(warp_affine(&m, &t).unwrap().data(), &[0.0, 1.0, 0.0, 3.0]);
    }

    #[test]
    fn reflections_are_involutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (h, w) in [(4, 4), (5, 7), (8, 3)] {
            let m = Tensor::<f32>::randn(vec![h, w], 1.0, &mut rng);
            for axis in [Axis::Horizontal, Axis::Vertical] {
                let r = build_affine(&TransformKind::Reflect { axis }, h, w).unwrap();
                let once = warp_affine(&m, &r).unwrap();
                assert!(!once.bit_eq(&m) || h == 1 || w == 1);
                assert!(warp_affine(&once, &r).unwrap().bit_eq(&m));
            }
        }
    }

    #[test]
    fn horizontal_reflection_mirrors_columns() {
        let m = Tensor::new(vec![1, 3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let r = build_affine(&TransformKind::Reflect { axis: Axis::Horizontal }, 1, 3).unwrap();
        assert_eq!(warp_affine(&m, &r).unwrap().data(), &[3.0, 2.0, 1.0]);
    }
}
