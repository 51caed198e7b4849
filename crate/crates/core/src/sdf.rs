//! Explicit signed distance to the hand surfaces and the deviated-SDF density.
//!
//! `σ(q) = (1/w) · sigmoid(−(s(q) + δ(q)) / w)` with `w = softplus(w_raw) + 1e-4`.
//! `s` is a constant per query; only `δ` and `w_raw` carry gradients.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::geometry::{Ray, Vec3};
use crate::scalar::{sigmoid, softplus, softplus_inverse, Real};
use crate::visibility::SceneCaster;

pub const W_FLOOR: f64 = 1e-4;
pub const W_INIT: f64 = 0.1;

/// Fixed, mutually non-parallel directions with irrational components.
pub const PARITY_DIRECTIONS: [Vec3; 3] = [
    Vec3::new(0.5773502691896258, 0.5345224838248488, 0.6172133998483676),
    Vec3::new(-0.7071067811865476, 0.3826834323650898, 0.5946035575013605),
    Vec3::new(0.2360679774997897, -0.8660254037844386, 0.4406611093318387),
];

/// Squared distance from `p` to triangle `abc` via the closest-point region test.
pub fn point_triangle_distance_squared(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    (closest_point_on_triangle(p, a, b, c) - p).norm_squared()
}

pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Ray-parity inside test along one direction: inside when some closed component
/// is crossed an odd number of times.
pub fn inside_along(caster: &SceneCaster, q: Vec3, dir: Vec3) -> bool {
    let Some(bvh) = &caster.bvh else { return false };
    let mut crossings: Vec<((usize, usize), u32)> = Vec::new();
    bvh.for_each_hit(&Ray::new(q, dir), |tri, _| {
        let key = (tri.id.slot, tri.component);
        match crossings.iter_mut().find(|(k, _)| *k == key) {
            Some((_, n)) => *n += 1,
            None => crossings.push((key, 1)),
        }
    });
    crossings.iter().any(|(_, n)| n % 2 == 1)
}

/// Majority vote of [`inside_along`] over [`PARITY_DIRECTIONS`].
pub fn is_inside(caster: &SceneCaster, q: Vec3) -> bool {
    PARITY_DIRECTIONS.iter().filter(|d| inside_along(caster, q, **d)).count() >= 2
}

pub fn unsigned_distance(caster: &SceneCaster, q: Vec3) -> f64 {
    match &caster.bvh {
        Some(bvh) => bvh.closest_triangle(q).0.sqrt(),
        None => f64::INFINITY,
    }
}

/// Signed distance to the union of the meshes; negative inside.
pub fn signed_distance(caster: &SceneCaster, q: Vec3) -> f64 {
    let d = unsigned_distance(caster, q);
    if is_inside(caster, q) {
        -d
    } else {
        d
    }
}

/// Learnable density sharpness; `w = softplus(w_raw) + 1e-4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityParams {
    pub w_raw: f64,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams::from_w(W_INIT)
    }
}

impl DensityParams {
    pub fn from_w(w: f64) -> Self {
        assert!(w > W_FLOOR, "w must exceed the floor {W_FLOOR}");
        DensityParams { w_raw: softplus_inverse(w - W_FLOOR) }
    }

    pub fn w(&self) -> f64 {
        softplus(self.w_raw) + W_FLOOR
    }
}

pub fn density(s: f64, delta: f64, params: &DensityParams) -> f64 {
    density_with_w(s, delta, params.w())
}

pub fn density_with_w(s: f64, delta: f64, w: f64) -> f64 {
    sigmoid(-(s + delta) / w) / w
}

/// Differentiable density for `n` samples. `s` is `[n, 1]` (constant), `delta`
/// `[n, 1]`, `w_raw` `[1, 1]`.
pub fn density_var<T: Real>(g: &mut Graph<T>, s: Var, delta: Var, w_raw: Var) -> Result<Var> {
    let n = g.shape(s)[0];
    let w = g.softplus(w_raw);
    let w = g.add_scalar(w, T::of(W_FLOOR));
    let w = g.broadcast_rows(w, n)?;
    let x = g.add(s, delta)?;
    let x = g.div(x, w)?;
    let x = g.neg(x);
    let sg = g.sigmoid(x);
    g.div(sg, w)
}
