//! PNG encoding of generator output.

use anyhow::{bail, Result};
use nbend_core::Tensor;

/// Map a tanh output in [−1, 1] to a byte, rounding half to even.
pub fn to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5).round_ties_even().clamp(0.0, 255.0) as u8
}

/// Encode a `[3, H, W]` image as 8-bit RGB PNG.
pub fn encode_png(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let &[3, h, w] = image.shape() else {
        bail!("expected a [3, H, W] image, got {:?}", image.shape());
    };
    if !image.is_finite() {
        bail!("image contains non-finite values");
    }
    let plane = h * w;
    let data = image.data();
    let mut rgb = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            rgb.push(to_byte(data[c * plane + i]));
        }
    }
    let mut bytes = Vec::new();
    let mut enc = png::Encoder::new(&mut bytes, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&rgb)?;
    writer.finish()?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        // 0 maps to 127.5, which rounds to the even 128.
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(2.0), 255);
    }

    #[test]
    fn rejects_wrong_shape() {
        assert!(encode_png(&Tensor::zeros(vec![1, 4, 4])).is_err());
        assert_eq!(&encode_png(&Tensor::zeros(vec![3, 2, 5])).unwrap()[1..4], b"PNG");
    }
}
