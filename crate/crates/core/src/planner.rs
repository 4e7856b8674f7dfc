//! Viewpoints for both stages.
//!
//! The generation stage follows predefined trajectories, each interpolated
//! between a start and an end pose, with every pose pushed backwards along
//! its viewing axis until it sees enough free space. The completion stage
//! samples random poses over a uniform grid of cells spanning the mesh and
//! keeps, per cell, the one that sees the most unobserved pixels.

use std::f64::consts::PI;

use nalgebra::{Rotation3, UnitQuaternion};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::geometry::{look_at, Camera, GeometryError, Intrinsics, Pose, TriangleMesh, Vec3};
use crate::imaging::mask_stats;
use crate::raster::FrameBundle;
use crate::rasterizer::render_with;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("trajectory {index}: {reason}")]
    InvalidTrajectory { index: usize, reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A look-at viewpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
}

impl ViewSpec {
    pub fn pose(&self) -> Result<Pose, GeometryError> {
        look_at(&self.eye.into(), &self.target.into(), &self.up.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptOverride {
    /// Zero-based frame index within the trajectory.
    pub frame: usize,
    pub prompt: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub start: ViewSpec,
    pub end: ViewSpec,
    pub frames: usize,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_overrides: Vec<PromptOverride>,
}

impl Trajectory {
    pub fn prompt_for(&self, frame: usize) -> &str {
        self.prompt_overrides
            .iter()
            .rev()
            .find(|o| o.frame == frame)
            .map_or(self.prompt.as_str(), |o| o.prompt.as_str())
    }
}

/// `frames` poses from start to end: centers linearly, rotations by slerp.
/// The first and last poses equal the endpoints exactly.
pub fn interpolate_trajectory(t: &Trajectory) -> Result<Vec<Pose>, GeometryError> {
    let start = t.start.pose()?;
    let end = t.end.pose()?;
    let n = t.frames;
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![start]);
    }
    let q0 = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*start.rotation()));
    let q1 = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*end.rotation()));
    let (c0, c1) = (start.center(), end.center());
    let mut poses = Vec::with_capacity(n);
    poses.push(start.clone());
    for i in 1..n - 1 {
        let s = i as f64 / (n - 1) as f64;
        let q = q0.slerp(&q1, s);
        let center = c0 + (c1 - c0) * s;
        poses.push(Pose::from_center(*q.to_rotation_matrix().matrix(), center)?);
    }
    poses.push(end);
    Ok(poses)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub pose: Pose,
    pub prompt: String,
    pub trajectory: usize,
    pub frame: usize,
}

/// Flattened `(pose, prompt)` list over all trajectories, in order.
pub fn build_generation_schedule(trajectories: &[Trajectory]) -> Result<Vec<ScheduleEntry>, PlannerError> {
    let mut out = Vec::new();
    for (index, t) in trajectories.iter().enumerate() {
        let invalid = |reason: String| PlannerError::InvalidTrajectory { index, reason };
        if t.frames == 0 {
            return Err(invalid("frame count must be at least 1".into()));
        }
        if let Some(o) = t.prompt_overrides.iter().find(|o| o.frame >= t.frames) {
            return Err(invalid(format!(
                "prompt override for frame {} of {}",
                o.frame, t.frames
            )));
        }
        let poses = interpolate_trajectory(t).map_err(|e| invalid(e.to_string()))?;
        for (frame, pose) in poses.into_iter().enumerate() {
            out.push(ScheduleEntry {
                pose,
                prompt: t.prompt_for(frame).to_string(),
                trajectory: index,
                frame,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackoffParams {
    /// Distance moved backwards per step.
    pub step: f64,
    /// Mean observed depth that must be exceeded.
    pub depth_threshold: f64,
    pub max_steps: usize,
}

impl Default for BackoffParams {
    fn default() -> Self {
        Self {
            step: 0.3,
            depth_threshold: 0.1,
            max_steps: 10,
        }
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Backoff {
    Accepted {
        camera: Camera,
        steps: usize,
        /// Render of the mesh from the accepted camera.
        frame: FrameBundle,
    },
    Rejected,
}

/// Moves the camera back along its viewing axis in steps until the mean
/// observed depth exceeds the threshold. The original pose is tried first; a
/// view with nothing observed is accepted as is.
pub fn backoff_camera(mesh: &TriangleMesh, camera: &Camera, params: &BackoffParams, exec: Execution) -> Backoff {
    let c0 = camera.center();
    let l = camera.forward();
    for k in 0..=params.max_steps {
        let candidate = if k == 0 {
            camera.clone()
        } else {
            Camera {
                intrinsics: camera.intrinsics,
                pose: camera.pose.with_center(c0 - l * (k as f64 * params.step)),
            }
        };
        let frame = render_with(mesh, &candidate, exec).frame;
        let stats = mask_stats(&frame);
        let ok = stats.mean_observed_depth.is_none_or(|d| d > params.depth_threshold);
        if ok {
            return Backoff::Accepted {
                camera: candidate,
                steps: k,
                frame,
            };
        }
    }
    Backoff::Rejected
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionConfig {
    /// Edge length of the cubic sampling cells.
    pub cell_size: f64,
    pub candidates_per_cell: usize,
    pub pitch_min_deg: f64,
    pub pitch_max_deg: f64,
    /// Candidates seeing any observed depth below this are discarded.
    pub near_threshold: f64,
    /// Sample/fuse rounds; each round re-samples against the updated mesh.
    pub rounds: usize,
    /// Prompt for completion views; the scene prompt when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            candidates_per_cell: 16,
            pitch_min_deg: -30.0,
            pitch_max_deg: 30.0,
            near_threshold: 0.1,
            rounds: 3,
            prompt: None,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(format!("cell_size {} must be positive", self.cell_size));
        }
        if self.candidates_per_cell == 0 {
            return Err("candidates_per_cell must be at least 1".into());
        }
        if !(self.pitch_min_deg <= self.pitch_max_deg) || self.pitch_min_deg < -89.0 || self.pitch_max_deg > 89.0 {
            return Err("pitch range must lie within [-89, 89] degrees".into());
        }
        Ok(())
    }
}

/// Camera orientation from yaw (about the vertical axis, 0 = +z) and pitch
/// (positive looks up, towards -y since y points down).
pub fn yaw_pitch_pose(center: Vec3, yaw: f64, pitch: f64) -> Pose {
    let dir = Vec3::new(yaw.sin() * pitch.cos(), -pitch.sin(), yaw.cos() * pitch.cos());
    look_at(&center, &(center + dir), &Vec3::new(0.0, 1.0, 0.0)).expect("pitch below 90 degrees")
}

/// Pose from a camera center and yaw, pitch and roll in degrees. Roll turns
/// the image clockwise about the viewing axis.
pub fn pose_from_6dof(center: Vec3, yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Result<Pose, GeometryError> {
    if pitch_deg.abs() >= 90.0 {
        return Err(GeometryError::DegenerateLookAt(
            "pitch must lie strictly between -90 and 90 degrees",
        ));
    }
    let base = yaw_pitch_pose(center, yaw_deg.to_radians(), pitch_deg.to_radians());
    let roll = Rotation3::from_axis_angle(&Vec3::z_axis(), roll_deg.to_radians());
    Pose::from_center(roll.matrix() * base.rotation(), center)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompletionPose {
    pub camera: Camera,
    pub cell: [usize; 3],
    pub unobserved: usize,
}

/// One pose per cell of the mesh bounding box that sees unobserved pixels
/// without getting closer than `near_threshold` to existing geometry.
///
/// All candidates are drawn sequentially from a ChaCha8 stream seeded with
/// `seed`, so the result depends only on the inputs; scoring renders run
/// according to `exec`.
pub fn sample_completion_poses(
    mesh: &TriangleMesh,
    cfg: &CompletionConfig,
    intrinsics: &Intrinsics,
    seed: u64,
    exec: Execution,
) -> Vec<CompletionPose> {
    let Some((lo, hi)) = mesh.bounding_box() else {
        return Vec::new();
    };
    let counts: [usize; 3] = std::array::from_fn(|i| (((hi[i] - lo[i]) / cfg.cell_size).ceil() as usize).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pmin, pmax) = (cfg.pitch_min_deg.to_radians(), cfg.pitch_max_deg.to_radians());
    let mut candidates = Vec::with_capacity(counts.iter().product::<usize>() * cfg.candidates_per_cell);
    for z in 0..counts[2] {
        for y in 0..counts[1] {
            for x in 0..counts[0] {
                let cell = [x, y, z];
                for _ in 0..cfg.candidates_per_cell {
                    let center = Vec3::from_fn(|i, _| {
                        let a = lo[i] + cell[i] as f64 * cfg.cell_size;
                        let b = (a + cfg.cell_size).min(hi[i]);
                        if b > a {
                            rng.random_range(a..b)
                        } else {
                            a
                        }
                    });
                    let yaw = rng.random_range(0.0..2.0 * PI);
                    let pitch = if pmax > pmin {
                        rng.random_range(pmin..pmax)
                    } else {
                        pmin
                    };
                    candidates.push((cell, yaw_pitch_pose(center, yaw, pitch)));
                }
            }
        }
    }
    let scores = exec::map_slice(exec, &candidates, |(_, pose)| {
        let cam = Camera {
            intrinsics: *intrinsics,
            pose: pose.clone(),
        };
        // scoring renders run sequentially inside; the fan-out is per candidate
        let frame = render_with(mesh, &cam, Execution::Sequential).frame;
        let too_close = frame
            .depth
            .data()
            .iter()
            .zip(frame.mask.data())
            .any(|(&d, &m)| !m && d < cfg.near_threshold);
        (!too_close).then(|| frame.mask.count_ones())
    });
    let mut out = Vec::new();
    for (chunk, chunk_scores) in candidates
        .chunks(cfg.candidates_per_cell)
        .zip(scores.chunks(cfg.candidates_per_cell))
    {
        let mut best: Option<(usize, usize)> = None;
        for (i, s) in chunk_scores.iter().enumerate() {
            if let Some(s) = *s {
                if s > 0 && best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        if let Some((i, unobserved)) = best {
            out.push(CompletionPose {
                camera: Camera {
                    intrinsics: *intrinsics,
                    pose: chunk[i].1.clone(),
                },
                cell: chunk[i].0,
                unobserved,
            });
        }
    }
    out
}

fn round4(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn view(eye: Vec3, yaw: f64, pitch: f64) -> ViewSpec {
    let dir = Vec3::new(yaw.sin() * pitch.cos(), -pitch.sin(), yaw.cos() * pitch.cos());
    let target = eye + dir;
    ViewSpec {
        eye: [round4(eye.x), round4(eye.y), round4(eye.z)],
        target: [round4(target.x), round4(target.y), round4(target.z)],
        up: [0.0, 1.0, 0.0],
    }
}

/// The shipped trajectories: twelve sweeps that each rotate through a 30°
/// chunk of the walls while moving out from the center, then four sweeps
/// looking down at the floor and four looking up at the ceiling.
pub fn default_trajectories(scene_prompt: &str) -> Vec<Trajectory> {
    let mut out = Vec::with_capacity(20);
    let horizontal = |yaw: f64, dist: f64| Vec3::new(yaw.sin() * dist, 0.0, yaw.cos() * dist);
    for k in 0..12 {
        let yaw = (30.0 * k as f64).to_radians();
        let next = yaw + 30f64.to_radians();
        out.push(Trajectory {
            start: view(Vec3::zeros(), yaw, 0.0),
            end: view(horizontal(yaw + 15f64.to_radians(), 0.8), next, 0.0),
            frames: 10,
            prompt: scene_prompt.to_string(),
            prompt_overrides: Vec::new(),
        });
    }
    for (pitch, surface) in [(-50.0f64, "floor"), (50.0, "ceiling")] {
        for k in 0..4 {
            let yaw = (45.0 + 90.0 * k as f64).to_radians();
            let pitch = pitch.to_radians();
            out.push(Trajectory {
                start: view(Vec3::zeros(), yaw, pitch),
                end: view(
                    horizontal(yaw + 45f64.to_radians(), 1.0),
                    yaw + 90f64.to_radians(),
                    pitch,
                ),
                frames: 10,
                prompt: format!("{surface} of {scene_prompt}"),
                prompt_overrides: Vec::new(),
            });
        }
    }
    out
}

/// Held-out cameras used to measure coverage: a ring of sixteen poses
/// between the trajectory paths, alternately tilted up and down by 15°.
pub fn evaluation_cameras(intrinsics: &Intrinsics) -> Vec<Camera> {
    (0..16)
        .map(|k| {
            let yaw = (11.25 + 22.5 * k as f64).to_radians();
            let center = Vec3::new(yaw.sin() * 0.6, 0.0, yaw.cos() * 0.6);
            let pitch = if k % 2 == 0 { 15f64 } else { -15.0 }.to_radians();
            Camera {
                intrinsics: *intrinsics,
                pose: yaw_pitch_pose(center, yaw, pitch),
            }
        })
        .collect()
}
