//! Mesh, camera and rigid-transform types shared by every stage.
//!
//! Conventions: a [`Pose`] maps world coordinates into the camera frame.
//! The camera looks along its +z axis, image columns grow along +x and image
//! rows grow along +y. Pixel `(u, v)` samples the ray through `(u, v, 1)`
//! after applying the inverse intrinsics, so a render followed by a
//! backprojection of the same pixel is an exact inverse.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Rgb;

pub type Vec3 = Vector3<f64>;

const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate look-at: {0}")]
    DegenerateLookAt(&'static str),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

/// Rigid world-to-camera transform `x_cam = R * x_world + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a pose from a rotation matrix and translation, checking that
    /// the rotation is proper and orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if !ortho.is_finite()
            || ortho > ROTATION_TOLERANCE
            || (det - 1.0).abs() > ROTATION_TOLERANCE
            || !translation.iter().all(|x| x.is_finite())
        {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self { rotation, translation })
    }

    /// Pose whose camera center sits at `center` with the given
    /// world-to-camera rotation.
    pub fn from_center(rotation: Matrix3<f64>, center: Vec3) -> Result<Self, GeometryError> {
        let t = -(rotation * center);
        Self::new(rotation, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Look-at direction: the camera +z axis expressed in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Same orientation, camera center moved to `center`.
    pub fn with_center(&self, center: Vec3) -> Pose {
        Pose {
            rotation: self.rotation,
            translation: -(self.rotation * center),
        }
    }
}

/// World-to-camera pose for a camera at `eye` looking at `target`.
///
/// `up` is the world direction the camera +y axis (increasing image rows)
/// is aligned with after orthogonalisation. The returned pose puts `eye` at
/// the origin of the camera frame with +z pointing at `target`.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Result<Pose, GeometryError> {
    let dir = target - eye;
    let len = dir.norm();
    if !len.is_finite() || len < 1e-12 {
        return Err(GeometryError::DegenerateLookAt("eye coincides with target"));
    }
    let z = dir / len;
    let up_len = up.norm();
    if !up_len.is_finite() || up_len < 1e-12 {
        return Err(GeometryError::DegenerateLookAt("zero up vector"));
    }
    let x = up.cross(&z);
    let x_len = x.norm();
    if x_len < 1e-9 * up_len {
        return Err(GeometryError::DegenerateLookAt("up is parallel to the view direction"));
    }
    let x = x / x_len;
    let y = z.cross(&x);
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Pose::from_center(rotation, *eye)
}

/// Pinhole intrinsics and image size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square-pixel intrinsics with the principal point at the image center
    /// and the given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, fov_x_deg: f64) -> Self {
        let f = (width as f64 / 2.0) / (fov_x_deg.to_radians() / 2.0).tan();
        Self {
            width,
            height,
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidIntrinsics(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad(format!("focal lengths must be positive: fx={} fy={}", self.fx, self.fy));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, pose })
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn center(&self) -> Vec3 {
        self.pose.center()
    }

    pub fn forward(&self) -> Vec3 {
        self.pose.forward()
    }

    /// Camera-space direction through pixel `(u, v)`, scaled so that z = 1.
    pub fn camera_ray(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }

    /// World point at camera-space depth `depth` along pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        self.pose.camera_to_world(&(self.camera_ray(u, v) * depth))
    }

    /// Pixel coordinates and camera-space depth of a world point, or `None`
    /// for points at or behind the camera plane.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.pose.world_to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z))
    }
}

/// Vertex-colored triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<Rgb>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(vertices: Vec<Vec3>, colors: Vec<Rgb>, faces: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        let mesh = Self {
            vertices,
            colors,
            faces,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidMesh(m));
        if self.colors.len() != self.vertices.len() {
            return bad(format!(
                "{} colors for {} vertices",
                self.colors.len(),
                self.vertices.len()
            ));
        }
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
            return bad(format!("vertex {i} is not finite"));
        }
        let n = self.vertices.len() as u64;
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&ix| ix as u64 >= n) {
                return bad(format!("face {i} {f:?} indexes past {n} vertices"));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return bad(format!("face {i} {f:?} repeats a vertex"));
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty() && self.vertices.is_empty()
    }

    pub fn face_positions(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    /// Appends `patch`, offsetting its face indices by the current vertex count.
    pub fn append(&mut self, patch: TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend(patch.vertices);
        self.colors.extend(patch.colors);
        self.faces.extend(
            patch
                .faces
                .into_iter()
                .map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]),
        );
    }

    /// Keeps faces for which `keep(face_index)` is true; vertices are untouched.
    pub fn retain_faces(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let mut i = 0;
        self.faces.retain(|_| {
            let k = keep(i);
            i += 1;
            k
        });
    }

    /// Drops vertices not referenced by any face, returning how many went.
    pub fn prune_orphans(&mut self) -> usize {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        for f in &self.faces {
            for &ix in f {
                remap[ix as usize] = 0;
            }
        }
        let mut next = 0u32;
        for r in remap.iter_mut() {
            if *r == 0 {
                *r = next;
                next += 1;
            }
        }
        let removed = self.vertices.len() - next as usize;
        if removed == 0 {
            return 0;
        }
        let mut w = 0;
        for (r, &m) in remap.iter().enumerate() {
            if m != u32::MAX {
                self.vertices[w] = self.vertices[r];
                self.colors[w] = self.colors[r];
                w += 1;
            }
        }
        self.vertices.truncate(w);
        self.colors.truncate(w);
        for f in self.faces.iter_mut() {
            for ix in f.iter_mut() {
                *ix = remap[*ix as usize];
            }
        }
        removed
    }

    /// Axis-aligned bounds of the vertices.
    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }
}

/// Concatenates two meshes; `patch` faces are offset by the base vertex count.
pub fn merge_meshes(base: &TriangleMesh, patch: &TriangleMesh) -> TriangleMesh {
    let mut out = base.clone();
    out.append(patch.clone());
    out
}
