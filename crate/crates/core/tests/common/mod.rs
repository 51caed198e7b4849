//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vanf::geometry::{Camera, Ray, TriMesh, Vec3};
use vanf::harness::dataset::{generate_scene, DatasetConfig, SceneSpec};
use vanf::visibility::VisibilityMap;

pub const EPS_HIT: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

type V = [f64; 3];

fn arr(v: Vec3) -> V {
    [v.x, v.y, v.z]
}

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V, b: V) -> V {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: V) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: V, s: f64) -> V {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: V, b: V) -> V {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Two-sided Möller–Trumbore; `t` of the hit plane crossing, no range check.
pub fn ray_triangle(origin: Vec3, dir: Vec3, tri: [Vec3; 3]) -> Option<f64> {
    let (o, d) = (arr(origin), arr(dir));
    let [a, b, c] = tri.map(arr);
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let p = cross(d, e2);
    let det = dot(e1, p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = sub(o, a);
    let u = dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = cross(s, e1);
    let v = dot(d, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(dot(e2, q) * inv)
}

/// Nearest hit over every triangle of every mesh: `(t, slot, face)`, ties to the lower id.
pub fn brute_first_hit(meshes: &[TriMesh], ray: &Ray) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (slot, m) in meshes.iter().enumerate() {
        for face in 0..m.face_count() {
            let Some(t) = ray_triangle(ray.origin, ray.direction, m.triangle(face)) else { continue };
            if t <= EPS_HIT {
                continue;
            }
            let better = match best {
                None => true,
                Some((bt, bs, bf)) => t < bt || (t == bt && (slot, face) < (bs, bf)),
            };
            if better {
                best = Some((t, slot, face));
            }
        }
    }
    best
}

pub fn brute_occluded(meshes: &[TriMesh], ray: &Ray, t_max: f64) -> bool {
    meshes.iter().any(|m| {
        (0..m.face_count()).any(|f| {
            ray_triangle(ray.origin, ray.direction, m.triangle(f)).is_some_and(|t| t > EPS_HIT && t < t_max)
        })
    })
}

pub fn brute_point_visibility(meshes: &[TriMesh], p: Vec3, camera: &Camera, offset: f64) -> bool {
    if camera.project(p).is_err() {
        return false;
    }
    let dir = (camera.center() - p).normalized();
    let origin = p + dir * offset;
    let t_max = (camera.center() - origin).norm();
    !brute_occluded(meshes, &Ray::new(origin, dir), t_max)
}

pub fn brute_silhouette(meshes: &[TriMesh], camera: &Camera) -> VisibilityMap {
    VisibilityMap::from_fn(camera.width, camera.height, |col, row| {
        if brute_first_hit(meshes, &camera.pixel_ray(col, row)).is_some() {
            1.0
        } else {
            0.0
        }
    })
}

fn point_segment_distance(p: V, a: V, b: V) -> f64 {
    let ab = sub(b, a);
    let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
    norm(sub(p, add(a, scale(ab, t))))
}

/// Plane projection when it lands inside the triangle, otherwise the nearest edge.
pub fn point_triangle_distance(p: Vec3, tri: [Vec3; 3]) -> f64 {
    let p = arr(p);
    let [a, b, c] = tri.map(arr);
    let n = cross(sub(b, a), sub(c, a));
    let nn = dot(n, n);
    let h = dot(sub(p, a), n) / nn;
    let proj = sub(p, scale(n, h));
    let inside = [(a, b), (b, c), (c, a)].iter().all(|&(u, v)| dot(cross(sub(v, u), sub(proj, u)), n) >= 0.0);
    if inside {
        return h.abs() * nn.sqrt();
    }
    point_segment_distance(p, a, b).min(point_segment_distance(p, b, c)).min(point_segment_distance(p, c, a))
}

pub fn brute_unsigned_distance(meshes: &[TriMesh], p: Vec3) -> f64 {
    meshes
        .iter()
        .flat_map(|m| (0..m.face_count()).map(move |f| point_triangle_distance(p, m.triangle(f))))
        .fold(f64::INFINITY, f64::min)
}

/// Generalized winding number of one closed mesh around `p`, via triangle solid angles.
pub fn winding_number(mesh: &TriMesh, p: Vec3) -> f64 {
    let mut total = 0.0;
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.triangle(f).map(|v| sub(arr(v), arr(p)));
        let (la, lb, lc) = (norm(a), norm(b), norm(c));
        let num = dot(a, cross(b, c));
        let den = la * lb * lc + dot(a, b) * lc + dot(b, c) * la + dot(c, a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * PI)
}

pub fn brute_inside(meshes: &[TriMesh], p: Vec3) -> bool {
    meshes.iter().any(|m| winding_number(m, p).abs() > 0.5)
}

pub fn scene_spec(seed: u64, id: usize, image_size: usize) -> SceneSpec {
    let cfg = DatasetConfig { seed, image_size, ..DatasetConfig::default() };
    generate_scene(&cfg, id).expect("scene generation")
}

pub fn uniform_in(rng: &mut impl Rng, lo: Vec3, hi: Vec3) -> Vec3 {
    Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z))
}

pub fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

/// Rays from a sphere around the meshes toward random points of their box.
pub fn random_rays(meshes: &[TriMesh], n: usize, rng: &mut impl Rng) -> Vec<Ray> {
    let b = vanf::geometry::scene_bounds(meshes).inflated(0.2);
    let c = b.center();
    let r = b.diagonal();
    (0..n)
        .map(|_| {
            let origin = c + unit_vector(rng) * r;
            let aim = uniform_in(rng, b.min, b.max);
            Ray::new(origin, (aim - origin).normalized())
        })
        .collect()
}

/// Scalar mean absolute error between equal-length slices.
pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

/// Clamped binary cross-entropy summed element by element, then averaged.
pub fn bce(p: &[f64], y: &[f64], clip: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let q = p[i].clamp(clip, 1.0 - clip);
        s -= y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln();
    }
    s / p.len() as f64
}
