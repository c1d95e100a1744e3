use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
}

/// Offsets `(dy, dx)` of the disc `dy² + dx² ≤ r²`.
pub fn disc_offsets(radius: u32) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

pub(crate) fn morph_plane(map: &[f32], height: usize, width: usize, op: MorphOp, radius: u32) -> Vec<f32> {
    if radius == 0 {
        return map.to_vec();
    }
    let offsets = disc_offsets(radius);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = Vec::with_capacity(map.len());
    for y in 0..height {
        for x in 0..width {
            let mut acc = map[y * width + x];
            for &(dy, dx) in &offsets {
                let v = map[clamp(y as isize + dy, height) * width + clamp(x as isize + dx, width)];
                acc = match op {
                    MorphOp::Erode => acc.min(v),
                    MorphOp::Dilate => acc.max(v),
                };
            }
            out.push(acc);
        }
    }
    out
}

/// Grayscale erosion (neighbourhood min) or dilation (neighbourhood max)
/// over a disc of radius `radius`, with edge replication at the border.
pub fn morph(map: &Tensor<f32>, op: MorphOp, radius: u32) -> Tensor<f32> {
    let r = map.rank();
    assert!(r >= 2, "morph needs an [H, W] map");
    let (h, w) = (map.shape()[r - 2], map.shape()[r - 1]);
    let planes = map.len() / (h * w).max(1);
    let mut data = Vec::with_capacity(map.len());
    for p in 0..planes {
        data.extend(morph_plane(&map.data()[p * h * w..(p + 1) * h * w], h, w, op, radius));
    }
    Tensor::new(map.shape().to_vec(), data).expect("shape preserved")
}
