//! Z-buffered triangle rasterization without shading.
//!
//! Pixels are sampled at integer coordinates `(u, v)`. Triangles are clipped
//! against the near plane `z = NEAR_PLANE`, there is no backface culling and
//! colors are interpolated perspective-correctly from the vertex colors.
//! Coverage ties on shared edges follow the top-left rule and depth ties go
//! to the lower face index, so the output does not depend on the order in
//! which bands or faces are processed.

use crate::exec::{self, Execution};
use crate::geometry::{Camera, TriangleMesh, Vec3};
use crate::raster::{FrameBundle, Raster, Rgb, NO_HIT};

/// Near clipping plane in camera-space z.
pub const NEAR_PLANE: f64 = 1e-4;

const BAND_ROWS: usize = 8;

/// A render plus, per pixel, the winning face and its barycentric weights
/// with respect to that face's original vertices.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub frame: FrameBundle,
    pub faces: Raster<Option<u32>>,
    pub barycentrics: Raster<[f64; 3]>,
}

pub fn render(mesh: &TriangleMesh, camera: &Camera) -> FrameBundle {
    render_with(mesh, camera, Execution::default()).frame
}

pub fn render_with_provenance(mesh: &TriangleMesh, camera: &Camera) -> RenderOutput {
    render_with(mesh, camera, Execution::default())
}

#[derive(Clone, Copy)]
struct Hit {
    depth: f64,
    face: u32,
    bary: [f64; 3],
}

const MISS: Hit = Hit {
    depth: NO_HIT,
    face: u32::MAX,
    bary: [0.0; 3],
};

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: Vec3,
    bary: [f64; 3],
}

struct ScreenTri {
    face: u32,
    xy: [[f64; 2]; 3],
    inv_z: [f64; 3],
    bary: [[f64; 3]; 3],
    top_left: [bool; 3],
    u_range: (usize, usize),
    v_range: (usize, usize),
}

/// Edge function evaluated in a canonical vertex order so that the two
/// triangles sharing an edge get exactly negated values.
#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let raw = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if (a[0], a[1]) <= (b[0], b[1]) {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

#[inline]
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    (d[1] == 0.0 && d[0] > 0.0) || d[1] < 0.0
}

fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let inside = |v: &ClipVertex| v.cam.z > NEAR_PLANE;
    if tri.iter().all(inside) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        if inside(&a) {
            out.push(a);
        }
        if inside(&a) != inside(&b) {
            let s = (NEAR_PLANE - a.cam.z) / (b.cam.z - a.cam.z);
            let bary: [f64; 3] = std::array::from_fn(|k| a.bary[k] + s * (b.bary[k] - a.bary[k]));
            let mut cam = a.cam + (b.cam - a.cam) * s;
            cam.z = NEAR_PLANE;
            out.push(ClipVertex { cam, bary });
        }
    }
    out
}

fn setup_triangles(face: u32, corners: [Vec3; 3], camera: &Camera, out: &mut Vec<ScreenTri>) {
    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let k = &camera.intrinsics;
    let poly = clip_near([0, 1, 2].map(|i| ClipVertex {
        cam: corners[i],
        bary: IDENTITY[i],
    }));
    if poly.len() < 3 {
        return;
    }
    let project = |c: &ClipVertex| [k.fx * c.cam.x / c.cam.z + k.cx, k.fy * c.cam.y / c.cam.z + k.cy];
    for j in 1..poly.len() - 1 {
        let mut verts = [poly[0], poly[j], poly[j + 1]];
        let mut xy = verts.map(|c| project(&c));
        let area = edge(xy[0], xy[1], xy[2]);
        if !area.is_finite() || area == 0.0 {
            continue;
        }
        if area < 0.0 {
            verts.swap(1, 2);
            xy.swap(1, 2);
        }
        let min_x = xy.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_x = xy.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_y = xy.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_y = xy.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let u0 = min_x.ceil().max(0.0);
        let u1 = max_x.floor().min(k.width as f64 - 1.0);
        let v0 = min_y.ceil().max(0.0);
        let v1 = max_y.floor().min(k.height as f64 - 1.0);
        if !(u0 <= u1 && v0 <= v1) {
            continue;
        }
        out.push(ScreenTri {
            face,
            xy,
            inv_z: verts.map(|c| 1.0 / c.cam.z),
            bary: verts.map(|c| c.bary),
            top_left: [
                is_top_left(xy[1], xy[2]),
                is_top_left(xy[2], xy[0]),
                is_top_left(xy[0], xy[1]),
            ],
            u_range: (u0 as usize, u1 as usize),
            v_range: (v0 as usize, v1 as usize),
        });
    }
}

fn rasterize_band(tris: &[ScreenTri], width: usize, row0: usize, band: &mut [Hit]) {
    let rows = band.len() / width;
    let row1 = row0 + rows - 1;
    for t in tris {
        if t.v_range.1 < row0 || t.v_range.0 > row1 {
            continue;
        }
        let [a, b, c] = t.xy;
        for v in t.v_range.0.max(row0)..=t.v_range.1.min(row1) {
            let start = (v - row0) * width;
            let line = &mut band[start + t.u_range.0..=start + t.u_range.1];
            for (u, hit) in (t.u_range.0..).zip(line.iter_mut()) {
                let p = [u as f64, v as f64];
                let w = [edge(b, c, p), edge(c, a, p), edge(a, b, p)];
                let covered = (0..3).all(|i| w[i] > 0.0 || (w[i] == 0.0 && t.top_left[i]));
                if !covered {
                    continue;
                }
                let sum = w[0] + w[1] + w[2];
                let q = [
                    w[0] / sum * t.inv_z[0],
                    w[1] / sum * t.inv_z[1],
                    w[2] / sum * t.inv_z[2],
                ];
                let s = q[0] + q[1] + q[2];
                let depth = 1.0 / s;
                if depth < hit.depth || (depth == hit.depth && t.face < hit.face) {
                    let mut bary = [0.0; 3];
                    for (qi, bi) in q.iter().zip(&t.bary) {
                        let wgt = qi / s;
                        for k in 0..3 {
                            bary[k] += wgt * bi[k];
                        }
                    }
                    *hit = Hit {
                        depth,
                        face: t.face,
                        bary,
                    };
                }
            }
        }
    }
}

/// Renders `mesh` from `camera` with an explicit scheduling strategy.
pub fn render_with(mesh: &TriangleMesh, camera: &Camera, exec: Execution) -> RenderOutput {
    let (w, h) = (camera.width(), camera.height());
    let pose = &camera.pose;
    let cam_vertices = exec::map_slice(exec, &mesh.vertices, |v| pose.world_to_camera(v));
    let per_face = exec::map_range(exec, mesh.faces.len(), |fi| {
        let f = mesh.faces[fi];
        let mut out = Vec::new();
        setup_triangles(
            fi as u32,
            [
                cam_vertices[f[0] as usize],
                cam_vertices[f[1] as usize],
                cam_vertices[f[2] as usize],
            ],
            camera,
            &mut out,
        );
        out
    });
    let tris: Vec<ScreenTri> = per_face.into_iter().flatten().collect();

    let mut hits = vec![MISS; w * h];
    exec::for_each_chunk_mut(exec, &mut hits, w * BAND_ROWS, |band_index, band| {
        rasterize_band(&tris, w, band_index * BAND_ROWS, band)
    });

    let mut depth = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    let mut rgb = Vec::with_capacity(w * h);
    let mut faces = Vec::with_capacity(w * h);
    let mut bary = Vec::with_capacity(w * h);
    for hit in &hits {
        if hit.face == u32::MAX {
            depth.push(NO_HIT);
            mask.push(true);
            rgb.push([0.0; 3]);
            faces.push(None);
            bary.push([0.0; 3]);
        } else {
            let f = mesh.faces[hit.face as usize];
            let mut c = [0.0f64; 3];
            for (k, &vi) in f.iter().enumerate() {
                let vc: Rgb = mesh.colors[vi as usize];
                for ch in 0..3 {
                    c[ch] += hit.bary[k] * vc[ch] as f64;
                }
            }
            depth.push(hit.depth);
            mask.push(false);
            rgb.push(c.map(|x| (x as f32).clamp(0.0, 1.0)));
            faces.push(Some(hit.face));
            bary.push(hit.bary);
        }
    }
    let r = |d| Raster::from_vec(w, h, d).expect("raster size");
    RenderOutput {
        frame: FrameBundle {
            rgb: Raster::from_vec(w, h, rgb).expect("raster size"),
            depth: r(depth),
            mask: Raster::from_vec(w, h, mask).expect("raster size"),
        },
        faces: Raster::from_vec(w, h, faces).expect("raster size"),
        barycentrics: Raster::from_vec(w, h, bary).expect("raster size"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose};

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(Intrinsics::from_fov(w, h, 90.0), Pose::identity()).unwrap()
    }

    /// Axis-aligned quad at depth `z` spanning `[x0, x1] × [y0, y1]`.
    fn quad(x0: f64, x1: f64, y0: f64, y1: f64, z: f64, color: Rgb) -> TriangleMesh {
        TriangleMesh::from_parts(
            vec![
                Vec3::new(x0, y0, z),
                Vec3::new(x1, y0, z),
                Vec3::new(x0, y1, z),
                Vec3::new(x1, y1, z),
            ],
            vec![color; 4],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap()
    }

    #[test]
    fn empty_mesh_is_fully_unobserved() {
        let f = render(&TriangleMesh::new(), &camera(16, 12));
        assert!(f.mask.all());
        assert!(f.depth.data().iter().all(|&d| d == NO_HIT));
    }

    #[test]
    fn fronto_parallel_plane_has_constant_depth() {
        let f = render(&quad(-10.0, 10.0, -10.0, 10.0, 2.0, [0.2, 0.4, 0.6]), &camera(32, 32));
        assert!(!f.mask.any());
        assert!(f.depth.data().iter().all(|&d| (d - 2.0).abs() < 1e-12));
        assert!(f.rgb.data().iter().all(|c| (c[1] - 0.4).abs() < 1e-6));
        assert!(f.validate().is_ok());
    }

    #[test]
    fn single_triangle_face_id() {
        let cam = camera(16, 16);
        let mesh = TriangleMesh::from_parts(
            vec![
                Vec3::new(-1.0, -1.0, 1.0),
                Vec3::new(1.0, -1.0, 1.0),
                Vec3::new(0.0, 1.0, 1.0),
            ],
            vec![[1.0; 3]; 3],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let out = render_with_provenance(&mesh, &cam);
        assert_eq!(out.faces.at(7, 7), Some(0));
        assert_eq!(out.faces.at(0, 15), None);
    }

    #[test]
    fn nearer_quad_wins() {
        let mut mesh = quad(-5.0, 5.0, -5.0, 5.0, 3.0, [0.0; 3]);
        mesh.append(quad(-5.0, 5.0, -5.0, 5.0, 1.5, [1.0; 3]));
        let out = render_with_provenance(&mesh, &camera(20, 20));
        assert!(out.faces.data().iter().all(|f| matches!(f, Some(2) | Some(3))));
        assert!(out.frame.depth.data().iter().all(|&d| (d - 1.5).abs() < 1e-12));
    }

    #[test]
    fn depth_ties_go_to_lower_face() {
        let mut mesh = quad(-5.0, 5.0, -5.0, 5.0, 2.0, [0.0; 3]);
        mesh.append(quad(-5.0, 5.0, -5.0, 5.0, 2.0, [1.0; 3]));
        let out = render_with_provenance(&mesh, &camera(10, 10));
        assert!(out.faces.data().iter().all(|f| matches!(f, Some(0) | Some(1))));
    }

    #[test]
    fn shared_edges_cover_each_sample_once() {
        // a fan of triangles around a vertex that sits exactly on a sample
        let cam = camera(9, 9);
        let c = cam.unproject(4.0, 4.0, 2.0);
        let ring: Vec<Vec3> = (0..6)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 3.0;
                cam.unproject(4.0 + 3.0 * a.cos(), 4.0 + 3.0 * a.sin(), 2.0)
            })
            .collect();
        let mut vertices = vec![c];
        vertices.extend(ring);
        let faces = (0..6u32).map(|i| [0, 1 + i, 1 + (i + 1) % 6]).collect();
        let mesh = TriangleMesh::from_parts(vertices, vec![[1.0; 3]; 7], faces).unwrap();
        let out = render_with_provenance(&mesh, &cam);
        // the center sample is covered by exactly one winner and no pixel
        // strictly inside the hexagon is left uncovered
        assert!(out.faces.at(4, 4).is_some());
        for (u, v) in [(3, 4), (5, 4), (4, 3), (4, 5), (3, 3), (5, 5)] {
            assert!(out.faces.at(u, v).is_some(), "hole at {u},{v}");
        }
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        // a floor strip running from behind the camera to z = 5
        let mesh = TriangleMesh::from_parts(
            vec![
                Vec3::new(-1.0, 1.0, -1.0),
                Vec3::new(1.0, 1.0, -1.0),
                Vec3::new(-1.0, 1.0, 5.0),
                Vec3::new(1.0, 1.0, 5.0),
            ],
            vec![[0.5; 3]; 4],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let cam = camera(32, 32);
        let f = render(&mesh, &cam);
        // bottom rows see the floor; depth along a row is y / ((v - cy) / fy)
        let k = cam.intrinsics;
        for v in 20..32 {
            let d = f.depth.at(15, v);
            let expected = 1.0 / ((v as f64 - k.cy) / k.fy);
            if expected < 5.0 {
                assert!((d - expected).abs() < 1e-9, "row {v}: {d} vs {expected}");
            }
        }
        assert!(f.mask.at(15, 0));
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let mut mesh = quad(-1.0, 1.0, -1.0, 0.5, 2.0, [0.3, 0.2, 0.1]);
        mesh.append(quad(-0.5, 2.0, -0.2, 1.0, 1.7, [0.9, 0.1, 0.4]));
        let cam = camera(37, 29);
        let a = render_with(&mesh, &cam, Execution::Sequential);
        let b = render_with(&mesh, &cam, Execution::Parallel);
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.faces, b.faces);
    }
}
