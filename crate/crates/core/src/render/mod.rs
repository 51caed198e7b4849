//! Ray sampling, volume-rendering quadrature and image synthesis.

mod field;
mod scene;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{scene_bounds, Aabb, Ray, TriMesh};

pub use field::{
    composite_var, pixel_seed, render_image, render_patch, render_pixel, render_rays, FieldOutput, PatchRender, PixelRect,
};
pub use scene::{InputView, PointData, Scene};

/// Scene boxes are grown by this fraction before clipping rays.
pub const BOX_INFLATION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    /// Side of square training patches, in pixels.
    pub patch: usize,
    pub background: [f64; 3],
    /// Stratified jitter and random fine draws; off gives bin midpoints and a
    /// regular CDF grid.
    pub perturb: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { n_coarse: 16, n_fine: 32, patch: 32, background: [0.0; 3], perturb: true }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse < 2 {
            return Err(invalid(format!("n_coarse must be at least 2, got {}", self.n_coarse)));
        }
        if self.patch == 0 {
            return Err(invalid("patch size must be positive"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid("background components must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn samples_per_ray(&self) -> usize {
        self.n_coarse + self.n_fine
    }
}

/// Clips `ray` to `bounds`; `None` when the ray misses or the box is behind it.
pub fn ray_bounds_in(bounds: &Aabb, ray: &Ray) -> Option<(f64, f64)> {
    if bounds.is_empty() {
        return None;
    }
    let (t0, t1) = bounds.ray_interval(ray.origin, ray.inv_direction())?;
    let near = t0.max(0.0);
    (t1 > near).then_some((near, t1))
}

/// Interval of `ray` inside the scene box inflated by [`BOX_INFLATION`].
pub fn ray_bounds(meshes: &[TriMesh], ray: &Ray) -> Option<(f64, f64)> {
    ray_bounds_in(&scene_bounds(meshes).inflated(BOX_INFLATION), ray)
}

/// One draw per equal sub-interval of `[near, far]`; bin midpoints without `rng`.
pub fn sample_coarse<R: Rng>(near: f64, far: f64, n: usize, mut rng: Option<&mut R>) -> Vec<f64> {
    let width = (far - near) / n as f64;
    (0..n)
        .map(|i| {
            let u = match rng.as_deref_mut() {
                Some(r) => r.gen::<f64>(),
                None => 0.5,
            };
            near + (i as f64 + u) * width
        })
        .collect()
}

/// Inverse-CDF draws from the piecewise-constant density given by `weights` over
/// the bins `[t_i, t_{i+1})` (the last bin ends at `far`), merged with `t_coarse`
/// and sorted. Falls back to uniform in `t` when the total weight is at most 1e-8.
pub fn sample_fine<R: Rng>(t_coarse: &[f64], weights: &[f64], far: f64, n_fine: usize, mut rng: Option<&mut R>) -> Vec<f64> {
    let n = t_coarse.len();
    assert_eq!(weights.len(), n, "one weight per coarse sample");
    let edge = |i: usize| if i + 1 < n { t_coarse[i + 1] } else { far };
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let mass: Vec<f64> = if total > 1e-8 {
        weights.iter().map(|w| w.max(0.0)).collect()
    } else {
        (0..n).map(|i| edge(i) - t_coarse[i]).collect()
    };
    let sum: f64 = mass.iter().sum();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &mass {
        acc += m / sum;
        cdf.push(acc);
    }
    cdf[n] = 1.0;
    let mut out = t_coarse.to_vec();
    out.reserve(n_fine);
    for j in 0..n_fine {
        let u = match rng.as_deref_mut() {
            Some(r) => r.gen::<f64>(),
            None => (j as f64 + 0.5) / n_fine as f64,
        };
        // first bin whose upper CDF exceeds u, which skips zero-mass bins
        let i = cdf[1..].partition_point(|&c| c <= u).min(n - 1);
        let p = cdf[i + 1] - cdf[i];
        let frac = if p > 0.0 { ((u - cdf[i]) / p).clamp(1e-9, 1.0 - 1e-9) } else { 0.5 };
        out.push(t_coarse[i] + frac * (edge(i) - t_coarse[i]));
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Quadrature result for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub rgb: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
    pub weights: Vec<f64>,
    /// Transmittance before each sample, plus the final value past the last one.
    pub transmittance: Vec<f64>,
}

/// Interval lengths `t_{i+1} − t_i`, the last one ending at `far`.
pub fn deltas(t: &[f64], far: f64) -> Vec<f64> {
    (0..t.len()).map(|i| if i + 1 < t.len() { t[i + 1] - t[i] } else { far - t[i] }).collect()
}

/// `α_i = 1 − exp(−σ_i Δ_i)`, `T_i = exp(−Σ_{j<i} σ_j Δ_j)`, `w_i = T_i α_i`.
pub fn composite(t: &[f64], far: f64, sigma: &[f64], rgb: &[[f64; 3]], background: [f64; 3]) -> Result<Composite> {
    if sigma.len() != t.len() || rgb.len() != t.len() {
        return Err(invalid(format!("composite needs aligned inputs, got {} t, {} σ, {} rgb", t.len(), sigma.len(), rgb.len())));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
        return Err(invalid(format!("density must be non-negative, got {s}")));
    }
    let dt = deltas(t, far);
    let mut acc = 0.0f64;
    let mut weights = Vec::with_capacity(t.len());
    let mut transmittance = Vec::with_capacity(t.len() + 1);
    let mut out = [0.0; 3];
    let mut depth = 0.0;
    for i in 0..t.len() {
        let x = sigma[i] * dt[i];
        let ti = (-acc).exp();
        let w = ti * (1.0 - (-x).exp());
        transmittance.push(ti);
        weights.push(w);
        for c in 0..3 {
            out[c] += w * rgb[i][c];
        }
        depth += w * t[i];
        acc += x;
    }
    transmittance.push((-acc).exp());
    let alpha: f64 = weights.iter().sum();
    for c in 0..3 {
        out[c] += (1.0 - alpha) * background[c];
    }
    Ok(Composite { rgb: out, alpha, depth, weights, transmittance })
}
