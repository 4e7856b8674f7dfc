//! Raster utilities for completion-stage mask cleaning: binary morphology,
//! fast-marching (Telea) inpainting and mask statistics.
//!
//! Morphology uses square kernels and treats out-of-bounds pixels as 0 unless
//! a border value is passed explicitly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{FrameBundle, Mask, Raster, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("nothing to inpaint from: every pixel is masked")]
    NoKnownPixels,
    #[error("mask and image sizes differ")]
    SizeMismatch,
    #[error("kernel size {0} must be odd and positive")]
    BadKernel(usize),
}

fn kernel_radius(kernel: usize) -> Result<usize, ImagingError> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(ImagingError::BadKernel(kernel));
    }
    Ok(kernel / 2)
}

/// One separable pass of a square min/max filter with the given border.
fn rank_filter(mask: &Mask, radius: usize, border: bool, want: bool) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    // `want` is the value that wins: true for dilation (any), false for erosion (all).
    let pass = |get: &dyn Fn(isize) -> bool, len: usize, i: usize| -> bool {
        let r = radius as isize;
        for d in -r..=r {
            let j = i as isize + d;
            let x = if j < 0 || j >= len as isize { border } else { get(j) };
            if x == want {
                return want;
            }
        }
        !want
    };
    let rows = Raster::from_fn(w, h, |u, v| pass(&|j| mask.at(j as usize, v), w, u));
    Raster::from_fn(w, h, |u, v| pass(&|j| rows.at(u, j as usize), h, v))
}

/// Square-kernel erosion; `outside` is the value assumed beyond the border.
pub fn erode_with_border(mask: &Mask, kernel: usize, outside: bool) -> Result<Mask, ImagingError> {
    Ok(rank_filter(mask, kernel_radius(kernel)?, outside, false))
}

/// Square-kernel dilation; `outside` is the value assumed beyond the border.
pub fn dilate_with_border(mask: &Mask, kernel: usize, outside: bool) -> Result<Mask, ImagingError> {
    Ok(rank_filter(mask, kernel_radius(kernel)?, outside, true))
}

/// Output is set iff the whole `kernel × kernel` neighborhood is set.
pub fn erode(mask: &Mask, kernel: usize) -> Result<Mask, ImagingError> {
    erode_with_border(mask, kernel, false)
}

/// `times` successive dilations with a `kernel × kernel` square.
pub fn dilate_repeated(mask: &Mask, kernel: usize, times: usize) -> Result<Mask, ImagingError> {
    let mut out = mask.clone();
    for _ in 0..times {
        out = dilate_with_border(&out, kernel, false)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(PartialEq)]
struct Front {
    t: f64,
    seq: u64,
    index: usize,
}

impl Eq for Front {}

impl Ord for Front {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on arrival time, FIFO among ties
        other.t.total_cmp(&self.t).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Front {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const FAR: f64 = 1.0e6;

/// Fast-marching inpainting of the masked pixels.
///
/// Pixels are filled in order of increasing distance from the mask boundary
/// as a normalised weighted average of already-known pixels within `radius`,
/// weighting by direction along the distance gradient, inverse cubed
/// distance and level-set proximity. Unmasked pixels are returned unchanged
/// and every filled value stays inside the range of the values it averages.
pub fn telea_inpaint(rgb: &RgbImage, mask: &Mask, radius: usize) -> Result<RgbImage, ImagingError> {
    if !rgb.same_dims(mask) {
        return Err(ImagingError::SizeMismatch);
    }
    if !mask.any() {
        return Ok(rgb.clone());
    }
    if mask.all() {
        return Err(ImagingError::NoKnownPixels);
    }
    let (w, h) = (mask.width(), mask.height());
    let mut out = rgb.clone();
    let mut flag: Vec<Flag> = mask
        .data()
        .iter()
        .map(|&m| if m { Flag::Inside } else { Flag::Known })
        .collect();
    let mut time: Vec<f64> = mask.data().iter().map(|&m| if m { FAR } else { 0.0 }).collect();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;

    let neighbors4 = |i: usize| {
        let (u, v) = (i % w, i / w);
        let mut n = [None; 4];
        if u > 0 {
            n[0] = Some(i - 1);
        }
        if u + 1 < w {
            n[1] = Some(i + 1);
        }
        if v > 0 {
            n[2] = Some(i - w);
        }
        if v + 1 < h {
            n[3] = Some(i + w);
        }
        n
    };

    for i in 0..w * h {
        if flag[i] == Flag::Known && neighbors4(i).iter().flatten().any(|&j| flag[j] == Flag::Inside) {
            flag[i] = Flag::Band;
            heap.push(Front { t: 0.0, seq, index: i });
            seq += 1;
        }
    }

    let r = radius as isize;
    while let Some(Front { index, .. }) = heap.pop() {
        if flag[index] == Flag::Known {
            continue;
        }
        flag[index] = Flag::Known;
        for j in neighbors4(index).into_iter().flatten() {
            if flag[j] != Flag::Inside {
                continue;
            }
            let (ju, jv) = ((j % w) as isize, (j / w) as isize);
            let at = |u: isize, v: isize| -> Option<usize> {
                (u >= 0 && v >= 0 && u < w as isize && v < h as isize).then(|| v as usize * w + u as usize)
            };
            let t = [
                solve_eikonal(at(ju - 1, jv), at(ju, jv - 1), &flag, &time),
                solve_eikonal(at(ju + 1, jv), at(ju, jv - 1), &flag, &time),
                solve_eikonal(at(ju - 1, jv), at(ju, jv + 1), &flag, &time),
                solve_eikonal(at(ju + 1, jv), at(ju, jv + 1), &flag, &time),
            ]
            .into_iter()
            .fold(FAR, f64::min);
            time[j] = t;

            let grad = |a: Option<usize>, b: Option<usize>| -> f64 {
                let ok = |x: Option<usize>| x.filter(|&x| flag[x] != Flag::Inside);
                match (ok(a), ok(b)) {
                    (Some(a), Some(b)) => (time[b] - time[a]) * 0.5,
                    (Some(a), None) => t - time[a],
                    (None, Some(b)) => time[b] - t,
                    (None, None) => 0.0,
                }
            };
            let grad_u = grad(at(ju - 1, jv), at(ju + 1, jv));
            let grad_v = grad(at(ju, jv - 1), at(ju, jv + 1));

            let mut acc = [0.0f64; 3];
            let mut lo = [f32::INFINITY; 3];
            let mut hi = [f32::NEG_INFINITY; 3];
            let mut total = 0.0;
            for dv in -r..=r {
                for du in -r..=r {
                    let Some(k) = at(ju + du, jv + dv) else { continue };
                    if flag[k] == Flag::Inside || du * du + dv * dv > r * r || k == j {
                        continue;
                    }
                    let (ru, rv) = (-du as f64, -dv as f64);
                    let len2 = ru * ru + rv * rv;
                    let dst = 1.0 / (len2 * len2.sqrt());
                    let lev = 1.0 / (1.0 + (time[k] - t).abs());
                    let mut dir = ru * grad_u + rv * grad_v;
                    if dir.abs() <= 0.01 {
                        dir = 1e-6;
                    }
                    let weight = (dst * lev * dir).abs();
                    let c = out.data()[k];
                    for ch in 0..3 {
                        acc[ch] += weight * c[ch] as f64;
                        lo[ch] = lo[ch].min(c[ch]);
                        hi[ch] = hi[ch].max(c[ch]);
                    }
                    total += weight;
                }
            }
            if total > 0.0 {
                let filled = [0, 1, 2].map(|ch| ((acc[ch] / total) as f32).clamp(lo[ch], hi[ch]));
                out.data_mut()[j] = filled;
            }
            flag[j] = Flag::Band;
            heap.push(Front { t, seq, index: j });
            seq += 1;
        }
    }
    Ok(out)
}

fn solve_eikonal(a: Option<usize>, b: Option<usize>, flag: &[Flag], time: &[f64]) -> f64 {
    let known = |x: Option<usize>| x.filter(|&x| flag[x] == Flag::Known).map(|x| time[x]);
    match (known(a), known(b)) {
        (Some(t1), Some(t2)) => {
            let d = t1 - t2;
            let disc = 2.0 - d * d;
            if disc < 0.0 {
                return 1.0 + t1.min(t2);
            }
            let r = disc.sqrt();
            let s = (t1 + t2 - r) / 2.0;
            if s >= t1 && s >= t2 {
                s
            } else {
                let s = s + r;
                if s >= t1 && s >= t2 {
                    s
                } else {
                    1.0 + t1.min(t2)
                }
            }
        }
        (Some(t1), None) => 1.0 + t1,
        (None, Some(t2)) => 1.0 + t2,
        (None, None) => FAR,
    }
}

/// Kernel sizes and Telea radius used by [`clean_inpaint_mask`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskCleaningParams {
    pub erosion_kernel: usize,
    pub dilation_kernel: usize,
    pub dilation_iterations: usize,
    pub telea_radius: usize,
}

impl Default for MaskCleaningParams {
    fn default() -> Self {
        Self {
            erosion_kernel: 3,
            dilation_kernel: 7,
            dilation_iterations: 5,
            telea_radius: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleanedMask {
    /// Input colors with the small holes filled classically.
    pub rgb: RgbImage,
    /// Holes that survived erosion, grown by repeated dilation.
    pub dilated: Mask,
    /// Erosion residue: pixels of the mask that did not survive erosion.
    pub small_holes: Mask,
}

/// Splits the unobserved mask into small holes, filled here with Telea
/// inpainting, and large holes, which are dilated for the generative backend.
pub fn clean_inpaint_mask(frame: &FrameBundle, params: &MaskCleaningParams) -> Result<CleanedMask, ImagingError> {
    let eroded = erode(&frame.mask, params.erosion_kernel)?;
    let small_holes = frame.mask.and_not(&eroded);
    let dilated = dilate_repeated(&eroded, params.dilation_kernel, params.dilation_iterations)?;
    if !small_holes.any() {
        return Ok(CleanedMask {
            rgb: frame.rgb.clone(),
            dilated,
            small_holes,
        });
    }
    // Fill from observed pixels only; large-hole pixels are recomputed but
    // only the small-hole results are kept.
    match telea_inpaint(&frame.rgb, &frame.mask, params.telea_radius) {
        Ok(filled) => {
            let mut rgb = frame.rgb.clone();
            for (i, &s) in small_holes.data().iter().enumerate() {
                if s {
                    rgb.data_mut()[i] = filled.data()[i];
                }
            }
            Ok(CleanedMask {
                rgb,
                dilated,
                small_holes,
            })
        }
        Err(ImagingError::NoKnownPixels) if !eroded.any() => Ok(CleanedMask {
            rgb: frame.rgb.clone(),
            dilated: frame.mask.clone(),
            small_holes: Raster::filled(frame.width(), frame.height(), false),
        }),
        Err(ImagingError::NoKnownPixels) => Ok(CleanedMask {
            rgb: frame.rgb.clone(),
            dilated: dilated.or(&small_holes),
            small_holes: Raster::filled(frame.width(), frame.height(), false),
        }),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskStats {
    pub unobserved: usize,
    pub pixels: usize,
    /// Mean depth over observed pixels; `None` when nothing is observed.
    pub mean_observed_depth: Option<f64>,
}

impl MaskStats {
    pub fn unobserved_fraction(&self) -> f64 {
        self.unobserved as f64 / self.pixels.max(1) as f64
    }
}

pub fn mask_stats(frame: &FrameBundle) -> MaskStats {
    let mut unobserved = 0;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&m, &d) in frame.mask.data().iter().zip(frame.depth.data()) {
        if m {
            unobserved += 1;
        } else {
            sum += d;
            n += 1;
        }
    }
    MaskStats {
        unobserved,
        pixels: frame.mask.len(),
        mean_observed_depth: (n > 0).then(|| sum / n as f64),
    }
}
