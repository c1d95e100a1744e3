use std::f64::consts::PI;

use nbend_core::transforms::*;
use nbend_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn map(rows: &[&[f32]]) -> Tensor<f32> {
    let w = rows[0].len();
    Tensor::new(vec![rows.len(), w], rows.concat()).unwrap()
}

/// Sum of up to three low-frequency sinusoids.
fn smooth_map(size: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let terms: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.2..0.6),
            )
        })
        .collect();
    Tensor::from_fn(vec![size, size], |i| {
        let (y, x) = ((i / size) as f64 / size as f64, (i % size) as f64 / size as f64);
        terms
            .iter()
            .map(|&(fx, fy, phase, amp)| amp * (2.0 * PI * (fx * x + fy * y) + phase).sin())
            .sum::<f64>() as f32
    })
}

fn central_mae(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let [h, w] = a.shape().try_into().unwrap();
    let (mut sum, mut n) = (0.0, 0);
    for y in h / 4..h / 4 + h / 2 {
        for x in w / 4..w / 4 + w / 2 {
            sum += (a.data()[y * w + x] - b.data()[y * w + x]).abs() as f64;
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn invert_example() {
    let out = apply_to_map(&map(&[&[0.3, 1.0, -0.5]]), &TransformKind::Invert).unwrap();
    for (a, b) in out.data().iter().zip([0.7f32, 0.0, 1.5]) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn threshold_at_half() {
    let t = TransformKind::BinaryThreshold { threshold: 0.5 };
    let out = apply_to_map(&map(&[&[0.49, 0.5, 0.51]]), &t).unwrap();
    assert_eq!(out.data(), &[0.0, 1.0, 1.0]);
}

#[test]
fn rotation_45_round_trip_on_smooth_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for size in [16, 32, 64] {
        for _ in 0..10 {
            let m = smooth_map(size, &mut rng);
            let there = apply_to_map(&m, &TransformKind::Rotate { degrees: 45.0 }).unwrap();
            let back = apply_to_map(&there, &TransformKind::Rotate { degrees: -45.0 }).unwrap();
            let mae = central_mae(&m, &back);
            assert!(mae < 0.05, "{size}×{size}: mae {mae}");
        }
    }
}

#[test]
fn rotate_45_matrix() {
    let m = build_affine(&TransformKind::Rotate { degrees: 45.0 }, 9, 9).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (cx, cy) = m.apply(4.0, 4.0);
    assert!((cx - 4.0).abs() < 1e-12 && (cy - 4.0).abs() < 1e-12);
    // A unit step right from the centre lands on (cos 45, sin 45).
    let (x, y) = m.apply(5.0, 4.0);
    assert!((x - 4.0 - s).abs() < 1e-12 && (y - 4.0 - s).abs() < 1e-12);
}

#[test]
fn scale_point_six_shrinks_towards_centre() {
    let k = TransformKind::Scale { kx: 0.6, ky: 0.6 };
    let m = build_affine(&k, 11, 11).unwrap();
    let (x, y) = m.apply(10.0, 0.0);
    assert!((x - 8.0).abs() < 1e-12 && (y - 2.0).abs() < 1e-12);
    // A centred blob keeps its centre of mass.
    let blob = Tensor::from_fn(vec![11, 11], |i| {
        let (y, x) = ((i / 11) as f32 - 5.0, (i % 11) as f32 - 5.0);
        (-(x * x + y * y) / 8.0).exp()
    });
    let out = apply_to_map(&blob, &k).unwrap();
    let peak = out.data().iter().cloned().fold(f32::MIN, f32::max);
    assert_eq!(out.data()[5 * 11 + 5], peak);
    assert!(out.data().iter().sum::<f32>() < blob.data().iter().sum::<f32>());
}

#[test]
fn dilate_single_peak() {
    let mut m = Tensor::<f32>::zeros(vec![5, 5]);
    m.data_mut()[12] = 1.0;
    let out = morph(&m, MorphOp::Dilate, 1);
    let ones: Vec<usize> = (0..25).filter(|&i| out.data()[i] == 1.0).collect();
    assert_eq!(ones, vec![7, 11, 12, 13, 17]);
    let r2 = morph(&m, MorphOp::Dilate, 2);
    assert_eq!(r2.data().iter().filter(|&&v| v == 1.0).count(), 13);
}

fn any_map() -> impl Strategy<Value = Tensor<f32>> {
    (1usize..10, 1usize..10).prop_flat_map(|(h, w)| {
        proptest::collection::vec(-4.0f32..4.0, h * w).prop_map(move |d| Tensor::new(vec![h, w], d).unwrap())
    })
}

proptest! {
    #[test]
    fn double_reflection_is_exact(m in any_map(), vertical in any::<bool>()) {
        let axis = if vertical { Axis::Vertical } else { Axis::Horizontal };
        let k = TransformKind::Reflect { axis };
        let twice = apply_to_map(&apply_to_map(&m, &k).unwrap(), &k).unwrap();
        prop_assert!(twice.bit_eq(&m));
    }

    #[test]
    fn identity_warp_is_exact(m in any_map()) {
        prop_assert!(warp_affine(&m, &AffineMatrix::IDENTITY).unwrap().bit_eq(&m));
        let none = apply_to_map(&m, &TransformKind::Rotate { degrees: 0.0 }).unwrap();
        prop_assert!(none.bit_eq(&m));
    }

    #[test]
    fn invert_is_an_involution(m in any_map()) {
        let twice = apply_to_map(&apply_to_map(&m, &TransformKind::Invert).unwrap(), &TransformKind::Invert).unwrap();
        for (a, b) in twice.data().iter().zip(m.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn threshold_is_binary_and_idempotent(m in any_map(), t in 0.001f64..=1.0) {
        let k = TransformKind::BinaryThreshold { threshold: t };
        let once = apply_to_map(&m, &k).unwrap();
        prop_assert!(once.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(apply_to_map(&once, &k).unwrap().bit_eq(&once));
    }

    #[test]
    fn morphology_brackets_and_duality(m in any_map(), r in 0u32..4) {
        let e = morph(&m, MorphOp::Erode, r);
        let d = morph(&m, MorphOp::Dilate, r);
        for ((lo, x), hi) in e.data().iter().zip(m.data()).zip(d.data()) {
            prop_assert!(lo <= x && x <= hi);
        }
        let dual = morph(&m.map(|v| -v), MorphOp::Erode, r).map(|v| -v);
        prop_assert!(dual.bit_eq(&d));
    }

    #[test]
    fn apply_to_features_leaves_others_alone(seed in 0u64..500, pick in proptest::collection::vec(0usize..6, 0..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts = Tensor::<f32>::rand_uniform(vec![6, 7, 7], -1.0, 1.0, &mut rng);
        let out = apply_to_features(&acts, &pick, &TransformKind::Dilate { radius: 2 }).unwrap();
        for f in 0..6 {
            if !pick.contains(&f) {
                prop_assert!(out.slice_outer(f).unwrap().bit_eq(&acts.slice_outer(f).unwrap()));
            }
        }
    }
}
