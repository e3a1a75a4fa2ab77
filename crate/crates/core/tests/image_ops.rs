mod common;

use colordot::image::{
    lcn, smooth_census_distance, sobel_gradients, warp_by_disparity, warp_disparity_derivative, ImagePlane,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Gaussian noise around 0.5 with σ = 0.3.
fn noise_image(w: usize, h: usize, ch: usize, seed: u64) -> ImagePlane {
    let mut rng = common::rng(seed);
    let normal = Normal::new(0.5, 0.3).unwrap();
    ImagePlane::from_vec(w, h, ch, (0..w * h * ch).map(|_| normal.sample(&mut rng)).collect()).unwrap()
}

fn max_abs_diff(a: &ImagePlane, b: &ImagePlane) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct two-pass window statistics with replicate padding.
fn lcn_oracle(img: &ImagePlane, u: usize, v: usize, c: usize, window: usize, eta: f64) -> f64 {
    let r = (window / 2) as isize;
    let at = |du: isize, dv: isize| {
        let x = (u as isize + du).clamp(0, img.width() as isize - 1) as usize;
        let y = (v as isize + dv).clamp(0, img.height() as isize - 1) as usize;
        img.get(x, y, c)
    };
    let n = (window * window) as f64;
    let mut mean = 0.0;
    for dv in -r..=r {
        for du in -r..=r {
            mean += at(du, dv);
        }
    }
    mean /= n;
    let mut var = 0.0;
    for dv in -r..=r {
        for du in -r..=r {
            var += (at(du, dv) - mean).powi(2);
        }
    }
    (img.get(u, v, c) - mean) / ((var / n).sqrt() + eta)
}

#[test]
fn lcn_matches_window_oracle() {
    let img = noise_image(23, 17, 2, 11);
    let out = lcn(&img, 11, 1e-4).unwrap();
    for v in 0..17 {
        for u in 0..23 {
            for c in 0..2 {
                assert!((out.get(u, v, c) - lcn_oracle(&img, u, v, c, 11, 1e-4)).abs() < 1e-9);
            }
        }
    }
}

/// With `η > 0` the response to `g·I` differs from the response to `I` by
/// `z·η·(1 − 1/g) / (σ + η/g)`, so the gain deviation is measured as the
/// mean absolute difference over the image.
#[test]
fn lcn_gain_invariance_on_noise() {
    for seed in 0..3 {
        let img = noise_image(64, 48, 3, seed);
        let base = lcn(&img, 11, 1e-4).unwrap();
        for gain in [0.5, 2.0, 4.0, 10.0, 100.0] {
            let scaled = lcn(&img.map(|x| gain * x), 11, 1e-4).unwrap();
            let n = base.data().len() as f64;
            let mean_dev = scaled.data().iter().zip(base.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
            assert!(mean_dev < 1e-3, "seed {seed} gain {gain}: {mean_dev:e}");
        }
    }
}

#[test]
fn lcn_local_mean_is_small() {
    let img = noise_image(64, 48, 1, 7);
    let out = lcn(&img, 11, 1e-4).unwrap();
    // magnitude of the 11×11 box-filtered response, averaged over the interior
    let mut total = 0.0;
    let mut count = 0;
    for v in 5..43 {
        for u in 5..59 {
            let mut s = 0.0;
            for dv in 0..11 {
                for du in 0..11 {
                    s += out.get(u + du - 5, v + dv - 5, 0);
                }
            }
            total += (s / 121.0).abs();
            count += 1;
        }
    }
    let mean = total / count as f64;
    assert!(mean < 0.1, "{mean}");
}

#[test]
fn warp_identity_is_bit_exact() {
    let f = noise_image(40, 10, 3, 1);
    assert_eq!(warp_by_disparity(&f, &ImagePlane::new(40, 10, 1)).unwrap(), f);
}

#[test]
fn warp_round_trip_on_constant_disparity() {
    let f = noise_image(50, 6, 2, 2);
    for d in [1.0, 3.0, 7.0, -4.0] {
        let plus = warp_by_disparity(&f, &ImagePlane::filled(50, 6, 1, d)).unwrap();
        let back = warp_by_disparity(&plus, &ImagePlane::filled(50, 6, 1, -d)).unwrap();
        let m = (d as f64).abs() as usize;
        // interior: columns whose round trip never leaves the image
        let cols = if d > 0.0 { 0..50 - m } else { m..50 };
        for v in 0..6 {
            for u in cols.clone() {
                for c in 0..2 {
                    assert_eq!(back.get(u, v, c), f.get(u, v, c), "d={d} ({u},{v})");
                }
            }
        }
    }
}

#[test]
fn fractional_shift_interpolates() {
    let f = noise_image(50, 6, 1, 8);
    let d = 2.25;
    let out = warp_by_disparity(&f, &ImagePlane::filled(50, 6, 1, d)).unwrap();
    for v in 0..6 {
        for u in 0..3 {
            assert!(out.get(u, v, 0).is_nan());
        }
        for u in 3..50 {
            // source x = u − 2.25 sits a quarter of the way from u−2 to u−3
            let want = 0.75 * f.get(u - 2, v, 0) + 0.25 * f.get(u - 3, v, 0);
            assert!((out.get(u, v, 0) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn warp_derivative_matches_finite_differences() {
    let f = noise_image(30, 4, 2, 3);
    let mut rng = common::rng(4);
    // keep clear of integer sample positions where the slope jumps
    let d: Vec<f64> = (0..120).map(|_| rng.random_range(2..6) as f64 + rng.random_range(0.1..0.9)).collect();
    let d = ImagePlane::from_vec(30, 4, 1, d).unwrap();
    let deriv = warp_disparity_derivative(&f, &d).unwrap();
    let h = 1e-6;
    let up = warp_by_disparity(&f, &d.map(|x| x + h)).unwrap();
    let down = warp_by_disparity(&f, &d.map(|x| x - h)).unwrap();
    for i in 0..deriv.data().len() {
        let (a, p, m) = (deriv.data()[i], up.data()[i], down.data()[i]);
        if a.is_nan() {
            assert!(p.is_nan() || m.is_nan());
            continue;
        }
        let fd = (p - m) / (2.0 * h);
        assert!((a - fd).abs() < 1e-8, "{a} vs {fd}");
    }
}

#[test]
fn sobel_is_linear() {
    let a = noise_image(20, 15, 1, 5);
    let b = noise_image(20, 15, 1, 6);
    let (ax, ay) = sobel_gradients(&a).unwrap();
    let (bx, by) = sobel_gradients(&b).unwrap();
    let (cx, cy) = sobel_gradients(&a.zip_map(&b, |x, y| 2.0 * x - 3.0 * y).unwrap()).unwrap();
    let lin = |p: &ImagePlane, q: &ImagePlane| p.zip_map(q, |x, y| 2.0 * x - 3.0 * y).unwrap();
    assert!(max_abs_diff(&cx, &lin(&ax, &bx)) < 1e-12);
    assert!(max_abs_diff(&cy, &lin(&ay, &by)) < 1e-12);
}

fn plane_strategy(w: usize, h: usize, ch: usize) -> impl Strategy<Value = ImagePlane> {
    prop::collection::vec(-2.0..2.0f64, w * h * ch).prop_map(move |d| ImagePlane::from_vec(w, h, ch, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn warp_is_linear_in_field(
        f1 in plane_strategy(16, 3, 2),
        f2 in plane_strategy(16, 3, 2),
        d in prop::collection::vec(-4.0..4.0f64, 48),
        alpha in -3.0..3.0f64,
        beta in -3.0..3.0f64,
    ) {
        let d = ImagePlane::from_vec(16, 3, 1, d).unwrap();
        let mix = f1.zip_map(&f2, |x, y| alpha * x + beta * y).unwrap();
        let lhs = warp_by_disparity(&mix, &d).unwrap();
        let w1 = warp_by_disparity(&f1, &d).unwrap();
        let w2 = warp_by_disparity(&f2, &d).unwrap();
        for i in 0..lhs.data().len() {
            let (l, r) = (lhs.data()[i], alpha * w1.data()[i] + beta * w2.data()[i]);
            prop_assert_eq!(l.is_nan(), r.is_nan());
            if !l.is_nan() {
                prop_assert!((l - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn census_symmetric_and_offset_invariant(
        a in plane_strategy(9, 8, 3),
        b in plane_strategy(9, 8, 3),
        ka in -5.0..5.0f64,
        kb in -5.0..5.0f64,
    ) {
        let ab = smooth_census_distance(&a, &b, 7, 1e-2).unwrap();
        let ba = smooth_census_distance(&b, &a, 7, 1e-2).unwrap();
        prop_assert_eq!(&ab, &ba);
        let shifted = smooth_census_distance(&a.map(|x| x + ka), &b.map(|x| x + kb), 7, 1e-2).unwrap();
        for (x, y) in shifted.data().iter().zip(ab.data()) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(x));
        }
    }

    #[test]
    fn lcn_is_shift_invariant(img in plane_strategy(12, 9, 1), k in -10.0..10.0f64) {
        let a = lcn(&img, 5, 1e-4).unwrap();
        let b = lcn(&img.map(|x| x + k), 5, 1e-4).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-9);
    }
}
