//! Lifting an inpainted frame into triangles and fusing them into the scene.
//!
//! Every pixel of the fusion mask becomes a vertex at its aligned depth. The
//! observed pixels that touch the mask (the seam ring) become vertices at
//! their *rendered* depth, so they sit on the existing surface and the new
//! patch closes up against it. Pixels are connected as a regular grid, each
//! 2×2 block split along the same diagonal, and faces that are too long or
//! seen at a grazing angle are dropped before merging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, TriangleMesh, Vec3};
use crate::raster::{DepthMap, FrameBundle, Mask, Raster, Rgb, RgbImage};
use crate::rasterizer::render_with_provenance;

/// Faces with area at or below this are always dropped.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("raster sizes differ from the camera")]
    SizeMismatch,
    #[error("no usable depth at pixel ({0}, {1})")]
    NoDepth(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    /// Longest allowed face edge, in world units.
    pub delta_edge: f64,
    /// Faces with `|n·v|` at or below this are grazing.
    pub delta_sn: f64,
    /// Depth tolerance for completion-stage face removal.
    pub eps_depth: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            delta_edge: 0.1,
            delta_sn: 0.1,
            eps_depth: 0.05,
        }
    }
}

/// World points for the requested pixels at `depth`.
pub fn backproject(depth: &DepthMap, camera: &Camera, pixels: &[(usize, usize)]) -> Result<Vec<Vec3>, FusionError> {
    if depth.width() != camera.width() || depth.height() != camera.height() {
        return Err(FusionError::SizeMismatch);
    }
    pixels
        .iter()
        .map(|&(u, v)| {
            let d = depth.at(u, v);
            if !(d.is_finite() && d > 0.0) {
                return Err(FusionError::NoDepth(u, v));
            }
            Ok(camera.unproject(u as f64, v as f64, d))
        })
        .collect()
}

/// Grid faces, as raster indices, over every 2×2 block fully inside `mask`.
pub fn triangulate_grid(mask: &Mask) -> Vec<[usize; 3]> {
    let (w, h) = (mask.width(), mask.height());
    let mut faces = Vec::new();
    for v in 0..h.saturating_sub(1) {
        for u in 0..w - 1 {
            if mask.at(u, v) && mask.at(u + 1, v) && mask.at(u, v + 1) && mask.at(u + 1, v + 1) {
                let (a, b, c, d) = (
                    mask.index(u, v),
                    mask.index(u + 1, v),
                    mask.index(u, v + 1),
                    mask.index(u + 1, v + 1),
                );
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            }
        }
    }
    faces
}

/// Observed pixels with at least one 8-neighbor in `mask`.
pub fn seam_ring(mask: &Mask) -> Mask {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Raster::from_fn(mask.width(), mask.height(), |u, v| {
        if mask.at(u, v) {
            return false;
        }
        for dv in -1..=1isize {
            for du in -1..=1isize {
                let (x, y) = (u as isize + du, v as isize + dv);
                if x >= 0 && y >= 0 && x < w && y < h && mask.at(x as usize, y as usize) {
                    return true;
                }
            }
        }
        false
    })
}

/// Candidate triangles for one frame, before merging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeshPatch {
    pub vertices: Vec<Vec3>,
    pub colors: Vec<Rgb>,
    /// Source pixel of each vertex.
    pub pixels: Vec<(u32, u32)>,
    /// Camera-space depth each vertex was lifted from.
    pub depths: Vec<f64>,
    /// Vertices placed on existing geometry from the rendered depth.
    pub seam: Vec<bool>,
    pub faces: Vec<[u32; 3]>,
}

impl MeshPatch {
    pub fn face_positions(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Converts to a mesh holding only the vertices used by a face.
    pub fn into_mesh(self) -> TriangleMesh {
        let mut mesh = TriangleMesh {
            vertices: self.vertices,
            colors: self.colors,
            faces: self.faces,
        };
        mesh.prune_orphans();
        mesh
    }
}

/// Lifts the pixels of `fuse_mask` (at `new_depth`, colored by `rgb`) and the
/// surrounding seam ring (at `rendered`, colored by `rgb`) into a patch.
pub fn build_patch(
    camera: &Camera,
    rendered: &DepthMap,
    rgb: &RgbImage,
    new_depth: &DepthMap,
    fuse_mask: &Mask,
) -> Result<MeshPatch, FusionError> {
    let (w, h) = (camera.width(), camera.height());
    for (rw, rh) in [
        (rendered.width(), rendered.height()),
        (rgb.width(), rgb.height()),
        (new_depth.width(), new_depth.height()),
        (fuse_mask.width(), fuse_mask.height()),
    ] {
        if (rw, rh) != (w, h) {
            return Err(FusionError::SizeMismatch);
        }
    }
    let ring = seam_ring(fuse_mask);
    let participating = fuse_mask.or(&ring);
    let mut patch = MeshPatch::default();
    let mut vertex_of = vec![u32::MAX; w * h];
    for (i, _) in participating.data().iter().enumerate().filter(|(_, &p)| p) {
        let (u, v) = participating.coords(i);
        let seam = ring.data()[i];
        let d = if seam { rendered.data()[i] } else { new_depth.data()[i] };
        if !(d.is_finite() && d > 0.0) {
            return Err(FusionError::NoDepth(u, v));
        }
        vertex_of[i] = patch.vertices.len() as u32;
        patch.vertices.push(camera.unproject(u as f64, v as f64, d));
        patch.colors.push(rgb.data()[i]);
        patch.pixels.push((u as u32, v as u32));
        patch.depths.push(d);
        patch.seam.push(seam);
    }
    patch.faces = triangulate_grid(&participating)
        .into_iter()
        .map(|f| f.map(|i| vertex_of[i]))
        .collect();
    Ok(patch)
}

/// Keeps faces whose edges are all at most `delta_edge` long.
pub fn filter_edge_length(mut patch: MeshPatch, delta_edge: f64) -> MeshPatch {
    let keep: Vec<bool> = (0..patch.faces.len())
        .map(|f| {
            let [a, b, c] = patch.face_positions(f);
            (a - b).norm() <= delta_edge && (b - c).norm() <= delta_edge && (c - a).norm() <= delta_edge
        })
        .collect();
    let mut it = keep.into_iter();
    patch.faces.retain(|_| it.next().unwrap());
    patch
}

/// `|n·v|` for face `f`, or `None` for a degenerate face.
pub fn face_view_cosine(patch: &MeshPatch, camera: &Camera, f: usize) -> Option<f64> {
    let [a, b, c] = patch.face_positions(f);
    let cross = (b - a).cross(&(c - a));
    if cross.norm() * 0.5 <= MIN_FACE_AREA {
        return None;
    }
    let n = cross.normalize();
    let (mut su, mut sv, mut sd) = (0.0, 0.0, 0.0);
    for &i in &patch.faces[f] {
        let (u, v) = patch.pixels[i as usize];
        su += u as f64;
        sv += v as f64;
        sd += patch.depths[i as usize];
    }
    let target = camera.unproject(su / 3.0, sv / 3.0, sd / 3.0);
    let view = (target - camera.center()).normalize();
    Some(n.dot(&view).abs())
}

/// Keeps non-degenerate faces with `|n·v| > delta_sn`.
pub fn filter_grazing(mut patch: MeshPatch, camera: &Camera, delta_sn: f64) -> MeshPatch {
    let keep: Vec<bool> = (0..patch.faces.len())
        .map(|f| face_view_cosine(&patch, camera, f).is_some_and(|c| c > delta_sn))
        .collect();
    let mut it = keep.into_iter();
    patch.faces.retain(|_| it.next().unwrap());
    patch
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FuseStats {
    pub faces_added: usize,
    pub vertices_added: usize,
    pub seam_vertices: usize,
}

/// Builds and filters the patch for one view and returns it as a mesh.
///
/// `rendered` is the depth of the existing mesh from `camera` (used for the
/// seam ring) and `fuse_mask` selects the pixels that receive new geometry.
pub fn filtered_patch(
    camera: &Camera,
    rendered: &DepthMap,
    rgb: &RgbImage,
    new_depth: &DepthMap,
    fuse_mask: &Mask,
    params: &FusionParams,
) -> Result<(TriangleMesh, FuseStats), FusionError> {
    if !fuse_mask.any() {
        return Ok((TriangleMesh::new(), FuseStats::default()));
    }
    let patch = build_patch(camera, rendered, rgb, new_depth, fuse_mask)?;
    let patch = filter_edge_length(patch, params.delta_edge);
    let patch = filter_grazing(patch, camera, params.delta_sn);
    let mut used = vec![false; patch.vertices.len()];
    for f in &patch.faces {
        for &i in f {
            used[i as usize] = true;
        }
    }
    let seam_vertices = used.iter().zip(&patch.seam).filter(|(&u, &s)| u && s).count();
    let mesh = patch.into_mesh();
    let stats = FuseStats {
        faces_added: mesh.face_count(),
        vertices_added: mesh.vertex_count(),
        seam_vertices,
    };
    Ok((mesh, stats))
}

/// Builds, filters and merges the patch for one view into `mesh`.
///
/// `frame` is the render of `mesh` from `camera`; `fuse_mask` selects the
/// pixels that receive new geometry (usually `frame.mask`). Nothing is
/// modified when an error is returned.
pub fn fuse_into(
    mesh: &mut TriangleMesh,
    camera: &Camera,
    frame: &FrameBundle,
    rgb: &RgbImage,
    new_depth: &DepthMap,
    fuse_mask: &Mask,
    params: &FusionParams,
) -> Result<FuseStats, FusionError> {
    let (patch, stats) = filtered_patch(camera, &frame.depth, rgb, new_depth, fuse_mask, params)?;
    mesh.append(patch);
    Ok(stats)
}

/// Pure form of [`fuse_into`] with the frame's own mask as fusion mask.
pub fn stitch_and_fuse(
    mesh: &TriangleMesh,
    camera: &Camera,
    frame: &FrameBundle,
    rgb: &RgbImage,
    new_depth: &DepthMap,
    params: &FusionParams,
) -> Result<TriangleMesh, FusionError> {
    let mut out = mesh.clone();
    fuse_into(&mut out, camera, frame, rgb, new_depth, &frame.mask, params)?;
    Ok(out)
}

/// Deletes faces seen from `camera` inside `region` at depth close to `depth`.
///
/// A face is removed when every pixel it wins lies in `region` with rendered
/// depth within `eps_depth` of `depth`, and it either wins at least one pixel
/// or all of its vertices project into the region at matching depth. Faces
/// that also show outside the region stay, which avoids opening cracks at
/// the region border. Returns the number of faces removed; orphaned
/// vertices are pruned.
pub fn remove_faces_in_region(
    mesh: &mut TriangleMesh,
    camera: &Camera,
    region: &Mask,
    depth: &DepthMap,
    eps_depth: f64,
) -> usize {
    if !region.any() || mesh.faces.is_empty() {
        return 0;
    }
    let render = render_with_provenance(mesh, camera);
    // 0 = not visible, 1 = removable, 2 = must stay
    let mut state = vec![0u8; mesh.faces.len()];
    for (i, face) in render.faces.data().iter().enumerate() {
        let Some(f) = *face else { continue };
        let f = f as usize;
        let inside = region.data()[i] && (render.frame.depth.data()[i] - depth.data()[i]).abs() <= eps_depth;
        state[f] = match (state[f], inside) {
            (2, _) | (_, false) => 2,
            _ => 1,
        };
    }
    // Faces narrower than a pixel may win no sample at all; they go when all
    // three vertices land in the region at matching depth.
    for (f, face) in mesh.faces.iter().enumerate() {
        if state[f] != 0 {
            continue;
        }
        let inside = face.iter().all(|&i| {
            camera.project(&mesh.vertices[i as usize]).is_some_and(|(u, v, z)| {
                let (u, v) = (u.round(), v.round());
                if u < 0.0 || v < 0.0 || u >= region.width() as f64 || v >= region.height() as f64 {
                    return false;
                }
                let (u, v) = (u as usize, v as usize);
                region.at(u, v) && near_depth(depth, u, v, z, eps_depth)
            })
        });
        if inside {
            state[f] = 1;
        }
    }
    let removed = state.iter().filter(|&&s| s == 1).count();
    if removed > 0 {
        mesh.retain_faces(|f| state[f] != 1);
        mesh.prune_orphans();
    }
    removed
}

/// Whether some pixel in the 3×3 neighborhood of `(u, v)` has depth within
/// `eps` of `z`. Vertices on the right or bottom edge of a surface are not
/// sampled by their own pixel, hence the neighborhood.
fn near_depth(depth: &DepthMap, u: usize, v: usize, z: f64, eps: f64) -> bool {
    let u0 = u.saturating_sub(1);
    let v0 = v.saturating_sub(1);
    let u1 = (u + 1).min(depth.width() - 1);
    let v1 = (v + 1).min(depth.height() - 1);
    (v0..=v1).any(|y| (u0..=u1).any(|x| (z - depth.at(x, y)).abs() <= eps))
}
