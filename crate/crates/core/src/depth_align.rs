//! Scale/shift alignment of predicted depth in disparity space, plus seam
//! smoothing along the unobserved-mask boundary.
//!
//! A depth predictor is only defined up to an affine map of disparity, so the
//! prediction `p` is mapped to `1 / (gamma / p + beta)` with `(gamma, beta)`
//! fitted by least squares against the rendered depth on observed pixels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, BackendSession, ViewRequest};
use crate::imaging::dilate_with_border;
use crate::raster::{DepthMap, FrameBundle, Mask, Raster, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("raster sizes differ")]
    SizeMismatch,
    #[error("need at least 2 observed pixels, found {0}")]
    TooFewPixels(usize),
    #[error("predicted disparity is constant over the observed pixels (rcond {0:e})")]
    Degenerate(f64),
    #[error("fitted scale {0} is not positive")]
    NonPositiveScale(f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Depth clamps and seam-smoothing kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthParams {
    /// Side of the square Gaussian used at mask edges (odd).
    pub smoothing_kernel: usize,
    pub smoothing_sigma: f64,
    /// Lower depth clamp applied before taking reciprocals.
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for DepthParams {
    fn default() -> Self {
        Self {
            smoothing_kernel: 5,
            smoothing_sigma: 1.0,
            min_depth: 1e-4,
            max_depth: 100.0,
        }
    }
}

/// Affine map applied to predicted disparity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisparityAlignment {
    pub gamma: f64,
    pub beta: f64,
}

impl DisparityAlignment {
    pub const IDENTITY: Self = Self { gamma: 1.0, beta: 0.0 };
}

impl Default for DisparityAlignment {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Below this reciprocal condition number of the normal matrix the fit is
/// considered rank deficient.
pub const MIN_RCOND: f64 = 1e-12;

/// Observed `(predicted disparity, rendered disparity)` pairs.
fn disparity_pairs(
    pred: &DepthMap,
    rendered: &DepthMap,
    mask: &Mask,
    min_depth: f64,
) -> Result<Vec<(f64, f64)>, AlignError> {
    if !pred.same_dims(rendered) || !pred.same_dims(mask) {
        return Err(AlignError::SizeMismatch);
    }
    Ok(mask
        .data()
        .iter()
        .zip(pred.data().iter().zip(rendered.data()))
        .filter(|(&m, (p, d))| !m && d.is_finite() && !p.is_nan())
        .map(|(_, (&p, &d))| (1.0 / p.max(min_depth), 1.0 / d.max(min_depth)))
        .collect())
}

/// Unconstrained least-squares `(gamma, beta)` for `gamma * x + beta ≈ y`.
pub fn fit_disparity(pairs: &[(f64, f64)]) -> Result<DisparityAlignment, AlignError> {
    let n = pairs.len();
    if n < 2 {
        return Err(AlignError::TooFewPixels(n));
    }
    let nf = n as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut sx2) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        sx2 += x * x;
    }
    // Normal matrix [[Σx², Σx], [Σx, n]]: det = n·Sxx, trace = Σx² + n.
    let trace = sx2 + nf;
    let det = nf * sxx;
    let disc = (trace * trace / 4.0 - det).max(0.0).sqrt();
    let lambda_max = trace / 2.0 + disc;
    let lambda_min = det / lambda_max;
    let rcond = if lambda_max > 0.0 { lambda_min / lambda_max } else { 0.0 };
    if !(rcond >= MIN_RCOND) {
        return Err(AlignError::Degenerate(rcond));
    }
    let gamma = sxy / sxx;
    Ok(DisparityAlignment {
        gamma,
        beta: mean_y - gamma * mean_x,
    })
}

/// Sum of squared disparity residuals over `pairs`.
pub fn disparity_residual(pairs: &[(f64, f64)], a: DisparityAlignment) -> f64 {
    pairs
        .iter()
        .map(|&(x, y)| {
            let r = a.gamma * x + a.beta - y;
            r * r
        })
        .sum()
}

/// Fits the alignment on pixels with `mask == false` and finite rendered depth.
pub fn solve_scale_shift(
    pred: &DepthMap,
    rendered: &DepthMap,
    mask: &Mask,
    params: &DepthParams,
) -> Result<DisparityAlignment, AlignError> {
    let pairs = disparity_pairs(pred, rendered, mask, params.min_depth)?;
    let a = fit_disparity(&pairs)?;
    if !(a.gamma > 0.0) || !a.beta.is_finite() {
        return Err(AlignError::NonPositiveScale(a.gamma));
    }
    Ok(a)
}

/// Maps one predicted depth through the alignment, clamped to `[min, max]`.
pub fn align_value(p: f64, a: DisparityAlignment, params: &DepthParams) -> f64 {
    if p.is_nan() {
        return params.max_depth;
    }
    let disparity = a.gamma / p.max(params.min_depth) + a.beta;
    if !(disparity > 1.0 / params.max_depth) {
        return params.max_depth;
    }
    (1.0 / disparity).max(params.min_depth)
}

pub fn apply_alignment(pred: &DepthMap, a: DisparityAlignment, params: &DepthParams) -> DepthMap {
    pred.map(|&p| align_value(p, a, params))
}

/// Pixels with an 8-neighbor of different mask value.
pub fn mask_boundary(mask: &Mask) -> Mask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Raster::from_fn(mask.width(), mask.height(), |u, v| {
        let m = mask.at(u, v);
        for dv in -1..=1isize {
            for du in -1..=1isize {
                let (x, y) = (u as isize + du, v as isize + dv);
                if x >= 0 && y >= 0 && x < w && y < h && mask.at(x as usize, y as usize) != m {
                    return true;
                }
            }
        }
        false
    })
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut k = Vec::with_capacity(size * size);
    for dv in -r..=r {
        for du in -r..=r {
            k.push((-((du * du + dv * dv) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    k
}

/// Gaussian-smooths `depth` within `kernel / 2` pixels (Chebyshev) of the mask
/// boundary; every other pixel is returned unchanged.
///
/// The filter is normalized over in-bounds finite neighbors and written as
/// `d + Σ w (d_q − d) / Σ w`, which keeps constant regions bit-exact.
pub fn smooth_mask_edges(depth: &DepthMap, mask: &Mask, params: &DepthParams) -> DepthMap {
    assert!(depth.same_dims(mask), "depth and mask sizes differ");
    let size = params.smoothing_kernel.max(1) | 1;
    let r = size / 2;
    let boundary = mask_boundary(mask);
    if r == 0 || !boundary.any() {
        return depth.clone();
    }
    let region = dilate_with_border(&boundary, size, false).expect("odd kernel");
    let kernel = gaussian_kernel(size, params.smoothing_sigma);
    let (w, h) = (depth.width() as isize, depth.height() as isize);
    let ri = r as isize;
    Raster::from_fn(depth.width(), depth.height(), |u, v| {
        let d = depth.at(u, v);
        if !region.at(u, v) || !d.is_finite() {
            return d;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for dv in -ri..=ri {
            for du in -ri..=ri {
                let (x, y) = (u as isize + du, v as isize + dv);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let q = depth.at(x as usize, y as usize);
                if !q.is_finite() {
                    continue;
                }
                let wgt = kernel[((dv + ri) * (2 * ri + 1) + du + ri) as usize];
                num += wgt * (q - d);
                den += wgt;
            }
        }
        d + num / den
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedDepth {
    pub depth: DepthMap,
    pub alignment: DisparityAlignment,
    /// True when the fit was skipped or degenerate and the prior was used.
    pub fallback: bool,
}

/// Asks the backend for a full depth prediction conditioned on the rendered
/// depth, aligns it to the rendered depth and smooths the mask seam.
///
/// `prior` is used when the view has too little observed depth to fit, e.g.
/// a completion camera that sees only holes. The predictor's scale is stable
/// across calls, so the scene's last fitted alignment is the best guess there.
pub fn predict_and_align(
    backend: &BackendSession,
    view: &ViewRequest<'_>,
    frame: &FrameBundle,
    rgb: &RgbImage,
    params: &DepthParams,
    prior: DisparityAlignment,
) -> Result<AlignedDepth, AlignError> {
    let pred = backend.inpaint_depth(view, rgb, &frame.depth, &frame.mask)?;
    let (alignment, fallback) = match solve_scale_shift(&pred, &frame.depth, &frame.mask, params) {
        Ok(a) => (a, false),
        Err(AlignError::TooFewPixels(_)) => (prior, true),
        Err(e @ (AlignError::Degenerate(_) | AlignError::NonPositiveScale(_))) => {
            log::warn!("depth alignment fell back to {prior:?}: {e}");
            (prior, true)
        }
        Err(e) => return Err(e),
    };
    let aligned = apply_alignment(&pred, alignment, params);
    Ok(AlignedDepth {
        depth: smooth_mask_edges(&aligned, &frame.mask, params),
        alignment,
        fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> DepthParams {
        DepthParams::default()
    }

    fn grid(values: &[f64]) -> DepthMap {
        Raster::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn identity_fit_is_exact() {
        let d = Raster::from_fn(8, 8, |u, v| 1.0 + u as f64 * 0.25 + v as f64 * 0.5);
        let mask = Raster::filled(8, 8, false);
        let a = solve_scale_shift(&d, &d, &mask, &p()).unwrap();
        assert!((a.gamma - 1.0).abs() < 1e-12);
        assert!(a.beta.abs() < 1e-12);
    }

    #[test]
    fn half_prediction_gives_half_gamma() {
        let rendered = Raster::from_fn(6, 5, |u, v| 1.0 + u as f64 + 0.3 * v as f64);
        let pred = rendered.map(|d| d / 2.0);
        let mask = Raster::filled(6, 5, false);
        let a = solve_scale_shift(&pred, &rendered, &mask, &p()).unwrap();
        assert!((a.gamma - 0.5).abs() < 1e-12);
        assert!(a.beta.abs() < 1e-12);
    }

    #[test]
    fn constant_prediction_is_degenerate() {
        let rendered = grid(&[1.0, 2.0]);
        let pred = grid(&[2.0, 2.0]);
        let mask = Raster::filled(2, 1, false);
        assert!(matches!(
            solve_scale_shift(&pred, &rendered, &mask, &p()),
            Err(AlignError::Degenerate(_))
        ));
    }

    #[test]
    fn two_pixel_fit_by_hand() {
        // disparities x = (1/2, 1/4), y = (1, 1/2): y = 2x exactly
        let a = solve_scale_shift(
            &grid(&[2.0, 4.0]),
            &grid(&[1.0, 2.0]),
            &Raster::filled(2, 1, false),
            &p(),
        )
        .unwrap();
        assert!((a.gamma - 2.0).abs() < 1e-12);
        assert!(a.beta.abs() < 1e-12);
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let rendered = grid(&[1.0, 2.0, 5.0, f64::INFINITY]);
        let pred = grid(&[1.0, 2.0, 50.0, 3.0]);
        let mask = Raster::from_vec(4, 1, vec![false, false, true, true]).unwrap();
        let a = solve_scale_shift(&pred, &rendered, &mask, &p()).unwrap();
        assert!((a.gamma - 1.0).abs() < 1e-12);
        let mask = Raster::from_vec(4, 1, vec![false, true, true, true]).unwrap();
        assert_eq!(
            solve_scale_shift(&pred, &rendered, &mask, &p()),
            Err(AlignError::TooFewPixels(1))
        );
    }

    #[test]
    fn apply_examples() {
        let a = DisparityAlignment { gamma: 0.5, beta: 0.0 };
        assert_eq!(align_value(2.0, a, &p()), 4.0);
        assert_eq!(align_value(3.0, DisparityAlignment::IDENTITY, &p()), 3.0);
        let big = DisparityAlignment { gamma: 1.0, beta: 10.0 };
        for x in [0.5, 1.0, 5.0, 50.0] {
            let y = align_value(x, big, &p());
            assert!((y - 0.1).abs() < 0.02, "{x} -> {y}");
        }
        let neg = DisparityAlignment { gamma: 1.0, beta: -5.0 };
        assert_eq!(align_value(1.0, neg, &p()), 100.0);
    }

    #[test]
    fn smoothing_is_noop_without_boundary() {
        let d = Raster::from_fn(9, 9, |u, v| (u * v) as f64);
        let out = smooth_mask_edges(&d, &Raster::filled(9, 9, false), &p());
        assert_eq!(out, d);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let d = Raster::filled(12, 10, 2.75);
        let mask = Raster::from_fn(12, 10, |u, v| u > 4 && v > 3);
        assert_eq!(smooth_mask_edges(&d, &mask, &p()), d);
    }

    #[test]
    fn step_edge_is_blended_locally() {
        let mask = Raster::from_fn(16, 8, |u, _| u >= 8);
        let d = Raster::from_fn(16, 8, |u, _| if u >= 8 { 2.0 } else { 1.0 });
        let out = smooth_mask_edges(&d, &mask, &p());
        for v in 0..8 {
            for u in [7, 8] {
                let x = out.at(u, v);
                assert!(x > 1.0 && x < 2.0, "({u},{v}) = {x}");
            }
            for u in (0..5).chain(11..16) {
                assert_eq!(out.at(u, v), d.at(u, v));
            }
        }
    }
}
