mod common;

use common::rng;
use proptest::prelude::*;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use roomweave::depth_align::*;
use roomweave::raster::{DepthMap, Mask, Raster, NO_HIT};

/// Random alignment problem: rendered depth is `pred` pushed through a known
/// disparity map plus noise, observed where the mask is unset.
fn instance(r: &mut ChaCha8Rng, w: usize, h: usize) -> (DepthMap, DepthMap, Mask) {
    let gamma = r.random_range(0.2..3.0);
    let beta = r.random_range(-0.1..0.3);
    let noise = r.random_range(0.0..0.05);
    let pred = Raster::from_fn(w, h, |_, _| r.random_range(0.5..8.0));
    let mask = Raster::from_fn(w, h, |_, _| r.random_bool(0.4));
    let rendered = Raster::from_fn(w, h, |u, v| {
        if mask.at(u, v) {
            NO_HIT
        } else {
            let y: f64 = gamma / pred.at(u, v) + beta + r.random_range(-noise..noise);
            1.0 / y.max(0.05)
        }
    });
    (pred, rendered, mask)
}

/// Disparity pairs straight from the rasters.
fn pairs(pred: &DepthMap, rendered: &DepthMap, mask: &Mask) -> Vec<(f64, f64)> {
    (0..pred.len())
        .filter(|&i| !mask.data()[i] && rendered.data()[i].is_finite())
        .map(|i| (1.0 / pred.data()[i], 1.0 / rendered.data()[i]))
        .collect()
}

/// Normal equations solved by Cramer's rule.
fn cramer(pairs: &[(f64, f64)]) -> (f64, f64) {
    let (mut sxx, mut sx, mut sxy, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxx += x * x;
        sx += x;
        sxy += x * y;
        sy += y;
    }
    let n = pairs.len() as f64;
    let det = sxx * n - sx * sx;
    ((sxy * n - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

fn params() -> DepthParams {
    DepthParams::default()
}

#[test]
fn identity_alignment_is_exact() {
    let mut r = rng(1);
    let pred = Raster::from_fn(16, 16, |_, _| r.random_range(0.5..8.0));
    let mask = Raster::from_fn(16, 16, |u, _| u > 10);
    let a = solve_scale_shift(&pred, &pred, &mask, &params()).unwrap();
    assert!((a.gamma - 1.0).abs() <= 1e-12 && a.beta.abs() <= 1e-12, "{a:?}");
}

#[test]
fn closed_form_matches_cramer() {
    let mut r = rng(2);
    for _ in 0..20 {
        let (pred, rendered, mask) = instance(&mut r, 12, 10);
        let a = solve_scale_shift(&pred, &rendered, &mask, &params()).unwrap();
        let (g, b) = cramer(&pairs(&pred, &rendered, &mask));
        assert!((a.gamma - g).abs() <= 1e-9 * g.abs().max(1.0));
        assert!((a.beta - b).abs() <= 1e-9);
    }
}

#[test]
fn closed_form_beats_random_candidates() {
    let mut r = rng(3);
    for _ in 0..100 {
        let (pred, rendered, mask) = instance(&mut r, 10, 10);
        let p = pairs(&pred, &rendered, &mask);
        let best = fit_disparity(&p).unwrap();
        let e = disparity_residual(&p, best);
        for _ in 0..10_000 {
            let c = DisparityAlignment {
                gamma: r.random_range(-10.0..10.0),
                beta: r.random_range(-10.0..10.0),
            };
            assert!(disparity_residual(&p, c) >= e);
        }
    }
}

#[test]
fn scale_perturbation_recovers_reciprocal_gamma() {
    // Prediction twice the truth: gamma 2 in disparity, depth halves back.
    let truth = Raster::from_fn(20, 20, |u, v| 1.0 + 0.1 * u as f64 + 0.05 * v as f64);
    let pred = truth.map(|d| d * 2.0);
    let mask = Raster::from_fn(20, 20, |u, _| u >= 14);
    let a = solve_scale_shift(&pred, &truth, &mask, &params()).unwrap();
    assert!((a.gamma - 2.0).abs() < 1e-9 && a.beta.abs() < 1e-9, "{a:?}");
    let out = apply_alignment(&pred, a, &params());
    for (o, t) in out.data().iter().zip(truth.data()) {
        assert!((o - t).abs() < 1e-9);
    }
}

#[test]
fn grid_search_agrees_with_closed_form() {
    // Depth prediction at twice the true scale plus a disparity offset.
    let truth = Raster::from_fn(8, 8, |u, v| 1.5 + 0.2 * u as f64 + 0.3 * v as f64);
    let pred = truth.map(|d| 1.0 / (0.5 / d - 0.05));
    let mask = Raster::filled(8, 8, false);
    let p = pairs(&pred, &truth, &mask);
    let a = fit_disparity(&p).unwrap();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=400 {
        for j in 0..=400 {
            let c = DisparityAlignment {
                gamma: 1.0 + i as f64 * 0.005,
                beta: -0.5 + j as f64 * 0.0025,
            };
            let e = disparity_residual(&p, c);
            if e < best.0 {
                best = (e, c.gamma, c.beta);
            }
        }
    }
    assert!(
        (best.1 - a.gamma).abs() <= 0.005 && (best.2 - a.beta).abs() <= 0.0025,
        "{best:?} vs {a:?}"
    );
    assert!((a.gamma - 2.0).abs() < 1e-9 && (a.beta - 0.1).abs() < 1e-9, "{a:?}");
}

#[test]
fn two_pixel_example() {
    let pred = Raster::from_vec(2, 1, vec![2.0, 4.0]).unwrap();
    let rendered = Raster::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
    let mask = Raster::filled(2, 1, false);
    let a = solve_scale_shift(&pred, &rendered, &mask, &params()).unwrap();
    assert!((a.gamma - 2.0).abs() < 1e-12 && a.beta.abs() < 1e-12);
    // Equal predictions carry no scale information.
    let flat = Raster::filled(2, 1, 2.0);
    assert!(matches!(
        solve_scale_shift(&flat, &rendered, &mask, &params()),
        Err(AlignError::Degenerate(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn scale_gauge(seed in any::<u64>(), s in 0.1f64..10.0) {
        let mut r = rng(seed);
        let (pred, rendered, mask) = instance(&mut r, 9, 7);
        let a = solve_scale_shift(&pred, &rendered, &mask, &params()).unwrap();
        let scaled = pred.map(|d| d * s);
        let b = solve_scale_shift(&scaled, &rendered, &mask, &params()).unwrap();
        prop_assert!((b.gamma - s * a.gamma).abs() <= 1e-9 * (s * a.gamma).abs().max(1.0));
        prop_assert!((b.beta - a.beta).abs() <= 1e-9);
        let x = apply_alignment(&pred, a, &params());
        let y = apply_alignment(&scaled, b, &params());
        for (p, q) in x.data().iter().zip(y.data()) {
            prop_assert!((p - q).abs() <= 1e-9, "{} vs {}", p, q);
        }
    }

    #[test]
    fn smoothing_only_touches_the_seam_band(seed in any::<u64>()) {
        let mut r = rng(seed);
        let depth = Raster::from_fn(16, 16, |_, _| r.random_range(1.0..3.0));
        let mask = common::blob_mask(&mut r, 16, 16, 2);
        let out = smooth_mask_edges(&depth, &mask, &params());
        let boundary = mask_boundary(&mask);
        for v in 0..16usize {
            for u in 0..16usize {
                let near = (0..16usize).any(|y| (0..16usize).any(|x| {
                    boundary.at(x, y) && x.abs_diff(u) <= 2 && y.abs_diff(v) <= 2
                }));
                if !near {
                    prop_assert_eq!(out.at(u, v), depth.at(u, v));
                } else {
                    // A weighted mean stays inside the neighborhood range.
                    prop_assert!(out.at(u, v) >= 1.0 && out.at(u, v) < 3.0);
                }
            }
        }
    }

    #[test]
    fn aligned_depth_is_clamped(p in 1e-6f64..1e3, g in 0.01f64..10.0, b in -1.0f64..1.0) {
        let params = params();
        let d = align_value(p, DisparityAlignment { gamma: g, beta: b }, &params);
        prop_assert!(d >= params.min_depth && d <= params.max_depth);
    }
}
