//! Finite-difference suite over the tape primitives, the density, the compositor,
//! the network heads, the losses and end-to-end pixel gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check, grad_check_params, GradCheckReport, Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::geometry::{Camera, HandLabel, TriMesh, Vec3};
use crate::networks::{Discriminator, Generator, NetConfig};
use crate::render::{composite_var, render_rays, InputView, RenderConfig, Scene};
use crate::sdf::density_var;
use crate::train::{loss_adv_discriminator, loss_adv_generator, loss_rgb, loss_vis, Perceptual};

pub const DEFAULT_TOL: f64 = 1e-4;
const H: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub tol: f64,
    pub max_rel_error: f64,
    pub checks: Vec<GradCheckReport>,
}

impl SuiteReport {
    pub fn new(checks: Vec<GradCheckReport>, tol: f64) -> SuiteReport {
        let passed = checks.iter().all(|c| c.passed);
        let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        SuiteReport { passed, tol, max_rel_error, checks }
    }
}

/// Weighted sum with fixed, uneven weights, turning any output into a scalar.
pub fn probe(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let n = g.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
    let shape = g.shape(y).to_vec();
    let w = g.constant(w, &shape)?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn values(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

type Check = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var>>;

fn check(name: &str, x: &[f64], shape: &[usize], tol: f64, f: Check) -> Result<GradCheckReport> {
    grad_check(name, move |g, v| f(g, v), x, shape, H, tol)
}

/// Elementwise, linear-algebra, reduction, shape and image primitives.
pub fn primitive_checks(tol: f64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let x = values(&mut rng, 12, 0.2, 1.5);
    let other = values(&mut rng, 12, 0.5, 1.5);
    let signed: Vec<f64> = values(&mut rng, 12, 0.1, 1.0).iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -v }).collect();
    let o = other.clone();
    let binary = move |op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>| -> Check {
        let o = o.clone();
        Box::new(move |g, v| {
            let c = g.constant(o.clone(), &[3, 4])?;
            let y = op(g, v, c)?;
            probe(g, y)
        })
    };
    let unary = |op: fn(&mut Graph<f64>, Var) -> Var| -> Check {
        Box::new(move |g, v| {
            let y = op(g, v);
            probe(g, y)
        })
    };
    let s34 = [3, 4];
    let mut out = vec![
        check("add", &x, &s34, tol, binary(|g, a, b| g.add(a, b)))?,
        check("sub", &x, &s34, tol, binary(|g, a, b| g.sub(a, b)))?,
        check("mul", &x, &s34, tol, binary(|g, a, b| g.mul(a, b)))?,
        check("div", &x, &s34, tol, binary(|g, a, b| g.div(b, a)))?,
        check("sigmoid", &signed, &s34, tol, unary(|g, a| g.sigmoid(a)))?,
        check("softplus", &signed, &s34, tol, unary(|g, a| g.softplus(a)))?,
        check("tanh", &signed, &s34, tol, unary(|g, a| g.tanh(a)))?,
        check("exp", &signed, &s34, tol, unary(|g, a| g.exp(a)))?,
        check("log", &x, &s34, tol, unary(|g, a| g.log(a)))?,
        check("relu", &signed, &s34, tol, unary(|g, a| g.relu(a)))?,
        check("clamp", &x, &s34, tol, unary(|g, a| g.clamp(a, 0.0, 1.0)))?,
        check("neg_scale_shift", &x, &s34, tol, unary(|g, a| {
            let b = g.neg(a);
            let b = g.scale(b, 1.7);
            let b = g.add_scalar(b, 0.3);
            g.one_minus(b)
        }))?,
    ];
    let w = values(&mut rng, 20, -1.0, 1.0);
    out.push(check("matmul", &x, &s34, tol, Box::new(move |g, v| {
        let m = g.constant(w.clone(), &[4, 5])?;
        let y = g.matmul(v, m)?;
        probe(g, y)
    }))?);
    out.push(check("transpose_reshape", &x, &s34, tol, Box::new(|g, v| {
        let t = g.transpose(v)?;
        let y = g.reshape(t, &[2, 6])?;
        let y = g.mul(y, y)?;
        probe(g, y)
    }))?);
    let row = values(&mut rng, 4, -1.0, 1.0);
    out.push(check("add_row_mul_col", &x, &s34, tol, Box::new(move |g, v| {
        let r = g.constant(row.clone(), &[1, 4])?;
        let y = g.add_row(v, r)?;
        let c = g.slice(v, 1, 1, 1)?;
        let y = g.mul_col(y, c)?;
        probe(g, y)
    }))?);
    out.push(check("reductions", &x, &s34, tol, Box::new(|g, v| {
        let a = g.sum_axis(v, 0)?;
        let a = g.mul(a, a)?;
        let a = probe(g, a)?;
        let sq = g.mul(v, v)?;
        let b = g.mean(sq);
        g.add(a, b)
    }))?);
    out.push(check("concat_slice_gather", &x, &s34, tol, Box::new(|g, v| {
        let a = g.slice(v, 0, 1, 2)?;
        let sq = g.mul(v, v)?;
        let c = g.concat(&[sq, a], 0)?;
        let d = g.gather_rows(c, vec![4, 0, 0, 2])?;
        let e = g.broadcast_rows(d, 1)?;
        probe(g, e)
    }))?);
    out.push(check("cumsum_exclusive", &x, &s34, tol, Box::new(|g, v| {
        let c = g.cumsum_exclusive(v)?;
        let n = g.neg(c);
        let e = g.exp(n);
        probe(g, e)
    }))?);
    let img = values(&mut rng, 2 * 5 * 6, -1.0, 1.0);
    let kw = values(&mut rng, 3 * 2 * 3 * 3, -0.5, 0.5);
    let kb = values(&mut rng, 3, -0.2, 0.2);
    let (kw2, kb2) = (kw.clone(), kb.clone());
    out.push(check("conv2d", &img, &[1, 2, 5, 6], tol, Box::new(move |g, v| {
        let w = g.constant(kw.clone(), &[3, 2, 3, 3])?;
        let b = g.constant(kb.clone(), &[3])?;
        let y = g.conv2d(v, w, b, 1, 1)?;
        probe(g, y)
    }))?);
    out.push(check("conv2d_weights", &kw2, &[3, 2, 3, 3], tol, Box::new(move |g, w| {
        let x = g.constant(img.clone(), &[1, 2, 5, 6])?;
        let b = g.constant(kb2.clone(), &[3])?;
        let y = g.conv2d(x, w, b, 2, 1)?;
        probe(g, y)
    }))?);
    let small = values(&mut rng, 2 * 3 * 3, -1.0, 1.0);
    out.push(check("upsample2x", &small, &[1, 2, 3, 3], tol, Box::new(|g, v| {
        let y = g.upsample2x(v)?;
        probe(g, y)
    }))?);
    let coords: Vec<(f64, f64)> = vec![(0.3, 0.7), (1.6, 0.2), (-0.4, 1.9), (2.2, 2.6), (0.5, 1.5)];
    out.push(check("bilinear_sample", &small, &[2, 3, 3], tol, Box::new(move |g, v| {
        let y = g.bilinear_sample(v, &coords)?;
        probe(g, y)
    }))?);
    Ok(out)
}

/// Density, compositor and loss terms.
pub fn field_and_loss_checks(tol: f64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let s = values(&mut rng, 8, -0.3, 0.3);
    let delta = values(&mut rng, 8, -0.05, 0.05);
    let (s1, d1) = (s.clone(), delta.clone());
    let mut out = vec![
        check("density_delta", &delta, &[8, 1], tol, Box::new(move |g, d| {
            let sv = g.constant(s1.clone(), &[8, 1])?;
            let w = g.constant(vec![-2.2], &[1, 1])?;
            let y = density_var(g, sv, d, w)?;
            probe(g, y)
        }))?,
        check("density_w", &[-2.2], &[1, 1], tol, Box::new(move |g, w| {
            let sv = g.constant(s.clone(), &[8, 1])?;
            let dv = g.constant(d1.clone(), &[8, 1])?;
            let y = density_var(g, sv, dv, w)?;
            probe(g, y)
        }))?,
    ];
    let sigma = values(&mut rng, 16, 0.0, 6.0);
    let colors = values(&mut rng, 48, 0.0, 1.0);
    let dt = values(&mut rng, 16, 0.05, 0.3);
    let (c1, dt1, sg1) = (colors.clone(), dt.clone(), sigma.clone());
    out.push(check("composite_sigma", &sigma, &[2, 8], tol, Box::new(move |g, s| {
        let c = g.constant(c1.clone(), &[16, 3])?;
        let (rgb, _) = composite_var(g, s, c, &dt1, [0.1, 0.2, 0.3])?;
        probe(g, rgb)
    }))?);
    out.push(check("composite_color", &colors, &[16, 3], tol, Box::new(move |g, c| {
        let s = g.constant(sg1.clone(), &[2, 8])?;
        let (rgb, w) = composite_var(g, s, c, &dt, [0.1, 0.2, 0.3])?;
        let a = probe(g, rgb)?;
        let b = probe(g, w)?;
        g.add(a, b)
    }))?);
    let pred = values(&mut rng, 3 * 8 * 8, 0.05, 0.95);
    let target = values(&mut rng, 3 * 8 * 8, 0.0, 1.0);
    let bits: Vec<f64> = (0..64).map(|i| ((i * 5) % 3 == 0) as u8 as f64).collect();
    let t1 = target.clone();
    out.push(check("loss_rgb", &pred, &[1, 3, 8, 8], tol, Box::new(move |g, p| {
        let t = g.constant(t1.clone(), &[1, 3, 8, 8])?;
        loss_rgb(g, p, t)
    }))?);
    out.push(check("loss_vis", &pred[..64], &[1, 1, 8, 8], tol, Box::new(move |g, v| loss_vis(g, v, &bits)))?);
    out.push(check("loss_adv", &[0.7, -0.4], &[2], tol, Box::new(|g, v| {
        let r = g.slice(v, 0, 0, 1)?;
        let f = g.slice(v, 0, 1, 1)?;
        let a = loss_adv_generator(g, f);
        let b = loss_adv_discriminator(g, r, f)?;
        g.add(a, b)
    }))?);
    let perc = Perceptual::<f64>::new(7);
    out.push(check("loss_perceptual", &pred, &[1, 3, 8, 8], tol, Box::new(move |g, p| {
        let t = g.constant(target.clone(), &[1, 3, 8, 8])?;
        perc.loss(g, p, t)
    }))?);
    Ok(out)
}

/// Two small boxes, 16×16 cameras and a textured input image.
pub struct MicroScene {
    pub scene: Scene,
    pub view: InputView,
    pub target: Camera,
}

impl MicroScene {
    pub fn new() -> Result<MicroScene> {
        let meshes = [
            TriMesh::cube(Vec3::new(-0.3, 0.0, 0.0), 0.45, 2, HandLabel::Left),
            TriMesh::cube(Vec3::new(0.3, 0.05, 0.1), 0.45, 2, HandLabel::Right),
        ];
        let scene = Scene::new(meshes)?;
        let up = Vec3::new(0.0, 0.0, 1.0);
        let input = Camera::look_at(Vec3::new(0.2, -3.0, 0.6), Vec3::ZERO, up, 0.6, 16, 16);
        let target = Camera::look_at(Vec3::new(2.4, -1.6, 0.4), Vec3::ZERO, up, 0.6, 16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let image = values(&mut rng, 3 * 16 * 16, 0.0, 1.0);
        let view = InputView::new(&scene, input, image)?;
        Ok(MicroScene { scene, view, target })
    }

    /// Renders the center pixel of the target view on `g`; `[1, 3]`.
    pub fn pixel(&self, g: &mut Graph<f64>, gen: &Generator, store: &ParamStore<f64>, cfg: &RenderConfig) -> Result<Var> {
        let (w, h) = (self.view.camera.width, self.view.camera.height);
        let img = g.constant_f64(&self.view.image, &[1, 3, h, w])?;
        let maps = gen.encode(g, store, img, &self.view.masks)?;
        let ray = self.target.pixel_ray(w / 2, h / 2);
        Ok(render_rays(g, gen, store, &self.scene, &self.view, &maps, &[(ray, 9)], cfg)?.rgb)
    }
}

/// One ray, four deterministic samples, no fine pass.
pub fn micro_render_config() -> RenderConfig {
    RenderConfig { n_coarse: 4, n_fine: 0, patch: 16, perturb: false, ..RenderConfig::default() }
}

/// Moves every parameter off exact zeros so ReLU kinks stay away from the probes.
pub fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        for v in &mut p.values {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
}

/// Index of the entry of `ids` with the largest gradient magnitude.
fn strongest(grads: &[Option<Vec<f64>>], ids: &[ParamId]) -> (usize, usize) {
    let mut best = (ids[0].0, 0, -1.0);
    for id in ids {
        if let Some(g) = &grads[id.0] {
            for (k, v) in g.iter().enumerate() {
                if v.abs() > best.2 {
                    best = (id.0, k, v.abs());
                }
            }
        }
    }
    (best.0, best.1)
}

/// d(pixel)/d(parameter) for the most influential parameter of every generator
/// network, and d(discriminator outputs)/d(parameter) for every discriminator stage.
pub fn end_to_end_checks(tol: f64) -> Result<Vec<GradCheckReport>> {
    let cfg = NetConfig::default();
    let micro = MicroScene::new()?;
    let rcfg = micro_render_config();
    let (gen, mut store) = Generator::new::<f64>(&cfg, 41);
    jitter(&mut store, 42);
    let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
        let px = micro.pixel(g, &gen, s, &rcfg)?;
        probe(g, px)
    };
    let mut g = Graph::new();
    let y = f(&mut g, &store)?;
    let grads = g.backward(y)?.for_store(&store);
    let mut out = Vec::new();
    for (name, ids) in gen.groups() {
        let entry = strongest(&grads, &ids);
        out.push(grad_check_params(&format!("pixel/{name}"), f, &store, Some(&[entry]), H, tol)?);
    }

    let (disc, mut dstore) = Discriminator::new::<f64>(&cfg, 43);
    jitter(&mut dstore, 44);
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let (a, b, c) = (values(&mut rng, 768, 0.0, 1.0), values(&mut rng, 768, 0.0, 1.0), values(&mut rng, 1536, 0.0, 1.0));
    let df = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
        let x = g.constant(a.clone(), &[1, 3, 16, 16])?;
        let t = g.constant(b.clone(), &[1, 3, 16, 16])?;
        let corr = g.constant(c.clone(), &[1, 6, 16, 16])?;
        let o = disc.discriminate(g, s, x, t, corr)?;
        match o.vis_map {
            Some(v) => {
                let p = probe(g, v)?;
                g.add(o.logit, p)
            }
            None => Ok(o.logit),
        }
    };
    let mut g = Graph::new();
    let y = df(&mut g, &dstore)?;
    let grads = g.backward(y)?.for_store(&dstore);
    for (name, ids) in disc.groups() {
        let entry = strongest(&grads, &ids);
        out.push(grad_check_params(&format!("disc/{name}"), df, &dstore, Some(&[entry]), H, tol)?);
    }
    Ok(out)
}

pub fn run_suite(tol: f64) -> Result<SuiteReport> {
    let mut checks = primitive_checks(tol)?;
    checks.extend(field_and_loss_checks(tol)?);
    checks.extend(end_to_end_checks(tol)?);
    Ok(SuiteReport::new(checks, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let r = run_suite(DEFAULT_TOL).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(r.passed);
        let json = serde_json::to_string(&r).unwrap();
        let back: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(back["checks"].as_array().unwrap().len(), r.checks.len());
    }

    #[test]
    fn sabotaged_rule_fails_the_suite() {
        let bad = grad_check(
            "sabotaged",
            |g, x| {
                let v: Vec<f64> = g.value(x).iter().map(|a| a * a).collect();
                let shape = g.shape(x).to_vec();
                let y = g.custom(&[x], v, &shape, Box::new(|gy, vals, _| vec![Some(gy.iter().zip(vals[0]).map(|(u, p)| u * p).collect())]))?;
                probe(g, y)
            },
            &[0.5, 1.5, -0.7],
            &[3],
            H,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(!bad.passed);
        let mut checks = primitive_checks(DEFAULT_TOL).unwrap();
        checks.push(bad);
        assert!(!SuiteReport::new(checks, DEFAULT_TOL).passed);
    }
}
