use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scene::{InputView, PointData, Scene};
use super::{deltas, ray_bounds_in, sample_coarse, sample_fine, RenderConfig};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{invalid, Result};
use crate::geometry::{Camera, Ray};
use crate::networks::{Branch, FeatureMaps, Generator, PointBatch};
use crate::scalar::Real;
use crate::sdf::density_var;

/// Pixel window of a camera image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub col0: usize,
    pub row0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub fn full(camera: &Camera) -> PixelRect {
        PixelRect { col0: 0, row0: 0, width: camera.width, height: camera.height }
    }

    pub fn check(&self, camera: &Camera) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.col0 + self.width > camera.width || self.row0 + self.height > camera.height {
            return Err(invalid(format!(
                "patch {}x{} at ({}, {}) exceeds the {}x{} image",
                self.width, self.height, self.col0, self.row0, camera.width, camera.height
            )));
        }
        Ok(())
    }

    /// Row-major pixel positions.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row0..self.row0 + self.height).flat_map(move |r| (self.col0..self.col0 + self.width).map(move |c| (c, r)))
    }
}

/// Sampling seed of one pixel, independent of which patch renders it.
pub fn pixel_seed(seed: u64, col: usize, row: usize) -> u64 {
    let mut z = seed ^ ((row as u64) << 32 | col as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Differentiable output for a set of rays.
pub struct FieldOutput {
    /// `[R, 3]`, background for rays that miss the scene box.
    pub rgb: Var,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
}

/// Differentiable quadrature on `R` rays of `S` samples: `sigma: [R, S]`,
/// `colors: [R·S, 3]`, `dt` row-major `R × S`. Returns `(rgb [R, 3], weights [R, S])`.
pub fn composite_var<T: Real>(
    g: &mut Graph<T>,
    sigma: Var,
    colors: Var,
    dt: &[f64],
    background: [f64; 3],
) -> Result<(Var, Var)> {
    let s = g.shape(sigma).to_vec();
    let (r, n) = (s[0], s[1]);
    let dt = g.constant_f64(dt, &[r, n])?;
    let x = g.mul(sigma, dt)?;
    let decay = g.neg(x);
    let decay = g.exp(decay);
    let alpha = g.one_minus(decay);
    let acc = g.cumsum_exclusive(x)?;
    let acc = g.neg(acc);
    let trans = g.exp(acc);
    let w = g.mul(trans, alpha)?;
    let mut channels = Vec::with_capacity(3);
    for c in 0..3 {
        let col = g.slice(colors, 1, c, 1)?;
        let col = g.reshape(col, &[r, n])?;
        let wc = g.mul(w, col)?;
        let sum = g.sum_axis(wc, 1)?;
        channels.push(g.reshape(sum, &[r, 1])?);
    }
    let mut rgb = g.concat(&channels, 1)?;
    if background.iter().any(|&b| b != 0.0) {
        let total = g.sum_axis(w, 1)?;
        let total = g.reshape(total, &[r, 1])?;
        let rest = g.one_minus(total);
        let bg = g.constant_f64(&background, &[1, 3])?;
        let bg = g.matmul(rest, bg)?;
        rgb = g.add(rgb, bg)?;
    }
    Ok((rgb, w))
}

struct RayPlan {
    index: usize,
    dir: crate::geometry::Vec3,
    far: f64,
    t: Vec<f64>,
    points: Vec<PointData>,
}

fn geometry_density<T: Real>(
    g: &mut Graph<T>,
    gen: &Generator,
    store: &ParamStore<T>,
    maps: &FeatureMaps,
    batch: &PointBatch,
    sdf: &[f64],
    delta_max: f64,
) -> Result<Var> {
    let n = batch.len();
    let fg = gen.fuse(g, store, Branch::Geometry, maps, batch)?;
    let delta = gen.deviation_head(g, store, fg.fused, delta_max)?;
    let s = g.constant_f64(sdf, &[n, 1])?;
    let w_raw = g.param(store, gen.w_raw);
    density_var(g, s, delta, w_raw)
}

fn batch_of(plans: &[RayPlan], cfg: &crate::networks::NetConfig) -> (PointBatch, Vec<f64>) {
    let mut batch = PointBatch::default();
    let mut sdf = Vec::new();
    for p in plans {
        for pt in &p.points {
            pt.push_into(&mut batch, p.dir, cfg);
            sdf.push(pt.sdf);
        }
    }
    (batch, sdf)
}

/// Renders `rays` (each with its sampling seed) through the field on tape `g`,
/// using feature maps already encoded on that tape.
#[allow(clippy::too_many_arguments)]
pub fn render_rays<T: Real>(
    g: &mut Graph<T>,
    gen: &Generator,
    store: &ParamStore<T>,
    scene: &Scene,
    view: &InputView,
    maps: &FeatureMaps,
    rays: &[(Ray, u64)],
    cfg: &RenderConfig,
) -> Result<FieldOutput> {
    cfg.validate()?;
    let netcfg = &gen.config;
    let delta_max = scene.delta_max(netcfg);
    let mut plans = Vec::new();
    let mut rngs = Vec::new();
    for (index, (ray, seed)) in rays.iter().enumerate() {
        let Some((near, far)) = ray_bounds_in(&scene.bounds, ray) else { continue };
        if scene.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let t = sample_coarse(near, far, cfg.n_coarse, cfg.perturb.then_some(&mut rng));
        let points = t.iter().map(|&t| PointData::compute(scene, view, ray.at(t))).collect();
        plans.push(RayPlan { index, dir: ray.direction, far, t, points });
        rngs.push((rng, *ray));
    }

    if cfg.n_fine > 0 && !plans.is_empty() {
        // coarse densities only steer sampling; evaluate them off the main tape
        let mut cg = Graph::<T>::new();
        cg.freeze(store);
        let gm = cg.constant(g.value(maps.geometry_map).to_vec(), g.shape(maps.geometry_map))?;
        let cmaps = FeatureMaps { texture_map: gm, geometry_map: gm, global_left: gm, global_right: gm };
        let (batch, sdf) = batch_of(&plans, netcfg);
        let sigma = geometry_density(&mut cg, gen, store, &cmaps, &batch, &sdf, delta_max)?;
        let sigma: Vec<f64> = cg.value(sigma).iter().map(|v| v.f64()).collect();
        for (k, (plan, (rng, ray))) in plans.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let n = cfg.n_coarse;
            let sg = &sigma[k * n..(k + 1) * n];
            let dt = deltas(&plan.t, plan.far);
            let mut acc = 0.0f64;
            let weights: Vec<f64> = sg
                .iter()
                .zip(&dt)
                .map(|(&s, &d)| {
                    let w = (-acc).exp() * (1.0 - (-s * d).exp());
                    acc += s * d;
                    w
                })
                .collect();
            let merged = sample_fine(&plan.t, &weights, plan.far, cfg.n_fine, cfg.perturb.then_some(rng));
            let mut coarse = std::mem::take(&mut plan.points).into_iter().zip(plan.t.iter().copied()).peekable();
            let mut points = Vec::with_capacity(merged.len());
            for &t in &merged {
                match coarse.peek() {
                    Some((_, tc)) if *tc == t => points.push(coarse.next().expect("peeked").0),
                    _ => points.push(PointData::compute(scene, view, ray.at(t))),
                }
            }
            plan.t = merged;
            plan.points = points;
        }
    }

    let bg = g.constant_f64(&cfg.background, &[1, 3])?;
    let mut alpha = vec![0.0; rays.len()];
    let mut depth = vec![0.0; rays.len()];
    if plans.is_empty() {
        let rgb = g.gather_rows(bg, vec![0; rays.len()])?;
        return Ok(FieldOutput { rgb, alpha, depth });
    }
    let s = cfg.samples_per_ray();
    let r = plans.len();
    let (batch, sdf) = batch_of(&plans, netcfg);
    let sigma = geometry_density(g, gen, store, maps, &batch, &sdf, delta_max)?;
    let sigma = g.reshape(sigma, &[r, s])?;
    let ft = gen.fuse(g, store, Branch::Texture, maps, &batch)?;
    let colors = gen.color_head(g, store, ft.fused, &batch)?;
    let dt: Vec<f64> = plans.iter().flat_map(|p| deltas(&p.t, p.far)).collect();
    let (rgb_hit, w) = composite_var(g, sigma, colors, &dt, cfg.background)?;
    let wv = g.value(w);
    for (k, p) in plans.iter().enumerate() {
        let row = &wv[k * s..(k + 1) * s];
        alpha[p.index] = row.iter().map(|v| v.f64()).sum();
        depth[p.index] = row.iter().zip(&p.t).map(|(w, t)| w.f64() * t).sum();
    }
    let mut rows = vec![r; rays.len()];
    for (k, p) in plans.iter().enumerate() {
        rows[p.index] = k;
    }
    let all = g.concat(&[rgb_hit, bg], 0)?;
    let rgb = g.gather_rows(all, rows)?;
    Ok(FieldOutput { rgb, alpha, depth })
}

/// Forward-only render of a pixel window.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRender {
    pub width: usize,
    pub height: usize,
    /// Planar `[3, h, w]`.
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
}

const CHUNK: usize = 128;

/// Renders `rect` of the `target` view in chunks of rays. Each pixel draws its
/// samples from [`pixel_seed`], so any window of a full render is reproduced exactly.
#[allow(clippy::too_many_arguments)]
pub fn render_patch<T: Real>(
    gen: &Generator,
    store: &ParamStore<T>,
    scene: &Scene,
    view: &InputView,
    target: &Camera,
    rect: PixelRect,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<PatchRender> {
    rect.check(target)?;
    let (w, h) = (view.camera.width, view.camera.height);
    let mut eg = Graph::<T>::new();
    eg.freeze(store);
    let img = eg.constant_f64(&view.image, &[1, 3, h, w])?;
    let maps = gen.encode(&mut eg, store, img, &view.masks)?;
    let saved: Vec<(Vec<T>, Vec<usize>)> = [maps.texture_map, maps.geometry_map, maps.global_left, maps.global_right]
        .iter()
        .map(|&v| (eg.value(v).to_vec(), eg.shape(v).to_vec()))
        .collect();
    drop(eg);

    let pixels: Vec<(usize, usize)> = rect.pixels().collect();
    let n = pixels.len();
    let mut out = PatchRender { width: rect.width, height: rect.height, rgb: vec![0.0; 3 * n], alpha: vec![0.0; n], depth: vec![0.0; n] };
    for (ci, chunk) in pixels.chunks(CHUNK).enumerate() {
        let mut g = Graph::<T>::new();
        g.freeze(store);
        let mut vars = Vec::with_capacity(4);
        for (v, s) in &saved {
            vars.push(g.constant(v.clone(), s)?);
        }
        let maps = FeatureMaps { texture_map: vars[0], geometry_map: vars[1], global_left: vars[2], global_right: vars[3] };
        let rays: Vec<(Ray, u64)> = chunk.iter().map(|&(c, r)| (target.pixel_ray(c, r), pixel_seed(seed, c, r))).collect();
        let res = render_rays(&mut g, gen, store, scene, view, &maps, &rays, cfg)?;
        let vals = g.value(res.rgb);
        for k in 0..chunk.len() {
            let i = ci * CHUNK + k;
            for c in 0..3 {
                out.rgb[c * n + i] = vals[3 * k + c].f64();
            }
            out.alpha[i] = res.alpha[k];
            out.depth[i] = res.depth[k];
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn render_image<T: Real>(
    gen: &Generator,
    store: &ParamStore<T>,
    scene: &Scene,
    view: &InputView,
    target: &Camera,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<PatchRender> {
    render_patch(gen, store, scene, view, target, PixelRect::full(target), cfg, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn render_pixel<T: Real>(
    gen: &Generator,
    store: &ParamStore<T>,
    scene: &Scene,
    view: &InputView,
    target: &Camera,
    col: usize,
    row: usize,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<[f64; 3]> {
    let rect = PixelRect { col0: col, row0: row, width: 1, height: 1 };
    let p = render_patch(gen, store, scene, view, target, rect, cfg, seed)?;
    Ok([p.rgb[0], p.rgb[1], p.rgb[2]])
}
