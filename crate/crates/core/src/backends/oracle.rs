//! Procedural box room with exact ray-cast depth and analytic textures.
//!
//! Stands in for the generative backends in tests and offline runs: the RGB
//! "inpainting" is the room's texture seen from the requesting camera and
//! the depth "inpainting" is the exact ray-cast depth, optionally scaled by
//! a global factor to exercise the disparity alignment.

use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::geometry::{Camera, Vec3};
use crate::raster::{DepthMap, Mask, Raster, Rgb, RgbImage};
use crate::rasterizer::NEAR_PLANE;

use super::BackendError;

/// Depth reported for rays that leave the scene without hitting anything.
pub const ORACLE_MISS_DEPTH: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxSpec {
    fn lo(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    fn hi(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    /// Distance from `p` to the boundary surface of the box.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        let (lo, hi) = (self.lo(), self.hi());
        let inside = (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i]);
        if inside {
            (0..3)
                .map(|i| (p[i] - lo[i]).min(hi[i] - p[i]))
                .fold(f64::INFINITY, f64::min)
        } else {
            let d = Vec3::from_fn(|i, _| (lo[i] - p[i]).max(0.0).max(p[i] - hi[i]));
            d.norm()
        }
    }

    /// First boundary crossing beyond `t_min` and the crossed face as
    /// `axis * 2 + side` (side 0 = min face).
    fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(f64, usize)> {
        let (lo, hi) = (self.lo(), self.hi());
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut near_face = 0;
        let mut far_face = 0;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < lo[i] || origin[i] > hi[i] {
                    return None;
                }
                continue;
            }
            let t1 = (lo[i] - origin[i]) / dir[i];
            let t2 = (hi[i] - origin[i]) / dir[i];
            let (ta, fa, tb, fb) = if t1 < t2 {
                (t1, i * 2, t2, i * 2 + 1)
            } else {
                (t2, i * 2 + 1, t1, i * 2)
            };
            if ta > t_near {
                t_near = ta;
                near_face = fa;
            }
            if tb < t_far {
                t_far = tb;
                far_face = fb;
            }
        }
        if t_near > t_far {
            return None;
        }
        if t_near > t_min {
            Some((t_near, near_face))
        } else if t_far > t_min {
            Some((t_far, far_face))
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Room interior bounds; the room is the boundary of this box.
    pub room: BoxSpec,
    #[serde(default)]
    pub furniture: Vec<BoxSpec>,
    pub texture_seed: u64,
    /// Global factor applied to every returned depth value.
    pub depth_scale: f64,
    /// Echo the known depth at observed pixels, like a depth-completion
    /// network conditioned on the rendered depth.
    pub condition_on_known: bool,
}

impl Default for OracleConfig {
    /// 6 × 3 × 4 room centered on the origin (y points down, floor at
    /// y = 1.5) with a bed, a cabinet and a free-standing ottoman.
    fn default() -> Self {
        Self {
            room: BoxSpec {
                min: [-3.0, -1.5, -2.0],
                max: [3.0, 1.5, 2.0],
            },
            furniture: vec![
                BoxSpec {
                    min: [-3.0, 0.9, -1.6],
                    max: [-1.8, 1.5, 0.2],
                },
                BoxSpec {
                    min: [1.4, 0.5, 1.5],
                    max: [2.4, 1.5, 2.0],
                },
                BoxSpec {
                    min: [0.9, 1.0, -1.5],
                    max: [1.6, 1.5, -0.8],
                },
            ],
            texture_seed: 7,
            depth_scale: 1.0,
            condition_on_known: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub point: Vec3,
    /// `box_index * 6 + face`, box 0 being the room.
    pub surface: usize,
}

#[derive(Clone, Debug)]
pub struct OracleRoom {
    config: OracleConfig,
    boxes: Vec<BoxSpec>,
    palette: Vec<Rgb>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl OracleRoom {
    pub fn new(config: OracleConfig) -> Result<Self, BackendError> {
        let mut boxes = vec![config.room];
        boxes.extend(config.furniture.iter().copied());
        for b in &boxes {
            if !(0..3).all(|i| b.min[i] < b.max[i] && b.min[i].is_finite() && b.max[i].is_finite()) {
                return Err(BackendError::InvalidInput(format!("degenerate box {b:?}")));
            }
        }
        if !(config.depth_scale > 0.0 && config.depth_scale.is_finite()) {
            return Err(BackendError::InvalidInput(format!(
                "depth scale {} must be positive",
                config.depth_scale
            )));
        }
        let palette = (0..boxes.len() * 6)
            .map(|s| {
                let h = splitmix(config.texture_seed ^ splitmix(s as u64));
                [0, 1, 2].map(|c| 0.25 + 0.6 * (((h >> (c * 16)) & 0xffff) as f32 / 65535.0))
            })
            .collect();
        Ok(Self { config, boxes, palette })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn set_depth_scale(&mut self, scale: f64) {
        self.config.depth_scale = scale;
    }

    pub fn cast(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (bi, b) in self.boxes.iter().enumerate() {
            if let Some((t, face)) = b.intersect(origin, dir, t_min) {
                if best.is_none_or(|h| t < h.t) {
                    best = Some(RayHit {
                        t,
                        point: origin + dir * t,
                        surface: bi * 6 + face,
                    });
                }
            }
        }
        best
    }

    /// Procedural texture: per-surface base color modulated by a 0.25-unit
    /// checker and a slow sinusoidal gradient.
    pub fn color(&self, hit: &RayHit) -> Rgb {
        let axis = (hit.surface % 6) / 2;
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let p = hit.point;
        let cell = (p[a] / 0.25).floor() as i64 + (p[b] / 0.25).floor() as i64;
        let checker = if cell.rem_euclid(2) == 0 { 1.0 } else { 0.8 };
        let wave = 0.9 + 0.1 * (p[a] * 1.3 + p[b] * 0.7).sin() as f32;
        let base = self.palette[hit.surface];
        base.map(|c| (c * checker * wave).clamp(0.0, 1.0))
    }

    /// Exact camera-space depth and color at every pixel.
    pub fn render(&self, camera: &Camera, exec: Execution) -> (RgbImage, DepthMap) {
        let (w, h) = (camera.width(), camera.height());
        let origin = camera.center();
        let rt = camera.pose.rotation().transpose();
        let samples = exec::map_range(exec, w * h, |i| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let dir = rt * camera.camera_ray(u, v);
            match self.cast(&origin, &dir, NEAR_PLANE) {
                Some(hit) => (self.color(&hit), hit.t),
                None => ([0.5; 3], ORACLE_MISS_DEPTH),
            }
        });
        let (rgb, depth): (Vec<Rgb>, Vec<f64>) = samples.into_iter().unzip();
        (
            Raster::from_vec(w, h, rgb).expect("raster size"),
            Raster::from_vec(w, h, depth).expect("raster size"),
        )
    }

    /// Distance from `p` to the nearest room or furniture surface.
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        self.boxes
            .iter()
            .map(|b| b.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn inpaint_rgb(&self, camera: &Camera, rgb: &RgbImage, mask: &Mask) -> RgbImage {
        if !mask.any() {
            return rgb.clone();
        }
        let (truth, _) = self.render(camera, Execution::default());
        let mut out = rgb.clone();
        for (i, &m) in mask.data().iter().enumerate() {
            if m {
                out.data_mut()[i] = truth.data()[i];
            }
        }
        out
    }

    pub fn inpaint_depth(&self, camera: &Camera, known_depth: &DepthMap, mask: &Mask) -> DepthMap {
        let (_, truth) = self.render(camera, Execution::default());
        let scale = self.config.depth_scale;
        Raster::from_fn(mask.width(), mask.height(), |u, v| {
            let known = known_depth.at(u, v);
            let base = if self.config.condition_on_known && !mask.at(u, v) && known.is_finite() {
                known
            } else {
                truth.at(u, v)
            };
            base * scale
        })
    }
}
