//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod schema;
pub mod stub;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomweave::geometry::{look_at, Camera, Intrinsics, Pose, TriangleMesh, Vec3};
use roomweave::raster::{DepthMap, Mask, Raster, NO_HIT};
use roomweave::rasterizer::NEAR_PLANE;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(w: usize, h: usize, fov: f64, eye: Vec3, target: Vec3) -> Camera {
    Camera::new(
        Intrinsics::from_fov(w, h, fov),
        look_at(&eye, &target, &Vec3::new(0.0, 1.0, 0.0)).unwrap(),
    )
    .unwrap()
}

pub fn identity_camera(w: usize, h: usize, fov: f64) -> Camera {
    Camera::new(Intrinsics::from_fov(w, h, fov), Pose::identity()).unwrap()
}

/// World-space ray through pixel `(u, v)`, scaled so that the ray parameter
/// equals camera-space depth.
pub fn pixel_ray(camera: &Camera, u: usize, v: usize) -> (Vec3, Vec3) {
    let k = &camera.intrinsics;
    let dir_cam = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
    let dir = camera.pose.rotation().transpose() * dir_cam;
    (camera.center(), dir)
}

/// Möller-Trumbore intersection; returns the ray parameter.
pub fn moller_trumbore(origin: &Vec3, dir: &Vec3, tri: [Vec3; 3]) -> Option<f64> {
    let [a, b, c] = tri;
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let bu = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&bu) {
        return None;
    }
    let q = s.cross(&e1);
    let bv = dir.dot(&q) * inv;
    if bv < 0.0 || bu + bv > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Nearest camera-space depth at every pixel by brute-force ray casting.
pub fn ray_cast_depth(mesh: &TriangleMesh, camera: &Camera) -> DepthMap {
    Raster::from_fn(camera.width(), camera.height(), |u, v| {
        let (o, d) = pixel_ray(camera, u, v);
        let mut best = NO_HIT;
        for f in 0..mesh.face_count() {
            if let Some(t) = moller_trumbore(&o, &d, mesh.face_positions(f)) {
                if t > NEAR_PLANE && t < best {
                    best = t;
                }
            }
        }
        best
    })
}

/// Random triangles inside the view frustum of an identity camera with a
/// 90° field of view, at depths in `[0.5, 6]`.
pub fn random_mesh(rng: &mut ChaCha8Rng, max_faces: usize) -> TriangleMesh {
    let n = rng.random_range(1..=max_faces);
    let mut mesh = TriangleMesh::new();
    for f in 0..n {
        let center_z: f64 = rng.random_range(0.8..5.5);
        let cx = rng.random_range(-1.0..1.0) * center_z;
        let cy = rng.random_range(-1.0..1.0) * center_z;
        let size = rng.random_range(0.1..1.5) * center_z.sqrt();
        for _ in 0..3 {
            let p = Vec3::new(
                cx + rng.random_range(-size..size),
                cy + rng.random_range(-size..size),
                (center_z + rng.random_range(-0.3..0.3) * size).max(0.5),
            );
            mesh.vertices.push(p);
            mesh.colors.push([rng.random_range(0.0..1.0f32); 3]);
        }
        let b = 3 * f as u32;
        mesh.faces.push([b, b + 1, b + 2]);
    }
    mesh
}

/// Closest distance from `p` to triangle `abc` (region classification on
/// the triangle's plane, falling back to the three edges).
pub fn point_triangle_distance(p: &Vec3, [a, b, c]: [Vec3; 3]) -> f64 {
    let n = (b - a).cross(&(c - a));
    let area2 = n.norm();
    if area2 > 1e-18 {
        let nn = n / area2;
        let dist = (p - a).dot(&nn);
        let q = p - nn * dist;
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|(s, e)| (e - s).cross(&(q - s)).dot(&nn) >= 0.0);
        if inside {
            return dist.abs();
        }
    }
    [(a, b), (b, c), (c, a)]
        .iter()
        .map(|(s, e)| point_segment_distance(p, s, e))
        .fold(f64::INFINITY, f64::min)
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

pub fn point_mesh_distance(p: &Vec3, mesh: &TriangleMesh) -> f64 {
    (0..mesh.face_count())
        .map(|f| point_triangle_distance(p, mesh.face_positions(f)))
        .fold(f64::INFINITY, f64::min)
}

/// Square-window min (`want = false`) or max (`want = true`) over in-bounds
/// neighbors; out-of-bounds pixels count as unset.
pub fn brute_rank(mask: &Mask, kernel: usize, dilate: bool) -> Mask {
    let r = (kernel / 2) as isize;
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    Raster::from_fn(mask.width(), mask.height(), |u, v| {
        let mut any = false;
        let mut all = true;
        for dv in -r..=r {
            for du in -r..=r {
                let (x, y) = (u as isize + du, v as isize + dv);
                let m = x >= 0 && y >= 0 && x < w && y < h && mask.at(x as usize, y as usize);
                any |= m;
                all &= m;
            }
        }
        if dilate {
            any
        } else {
            all
        }
    })
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> Mask {
    Raster::from_fn(w, h, |_, _| rng.random_bool(density))
}

/// Random blobs: a union of axis-aligned rectangles.
pub fn blob_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, blobs: usize) -> Mask {
    let mut m = Raster::filled(w, h, false);
    for _ in 0..blobs {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (bw, bh) = (rng.random_range(1..=w / 3 + 1), rng.random_range(1..=h / 3 + 1));
        for v in y0..(y0 + bh).min(h) {
            for u in x0..(x0 + bw).min(w) {
                m.set(u, v, true);
            }
        }
    }
    m
}
