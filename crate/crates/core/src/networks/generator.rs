use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, Mlp};
use super::{FeatureSet, NetConfig};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{invalid, Result};
use crate::scalar::Real;
use crate::sdf::DensityParams;
use crate::visibility::VisibilityMap;

/// Encoder outputs for one input image. Spatial maps are `[1, D, H/4, W/4]`,
/// global vectors `[1, D]`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMaps {
    pub texture_map: Var,
    pub geometry_map: Var,
    pub global_left: Var,
    pub global_right: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Texture,
    Geometry,
}

/// Per-point inputs to fusion and the heads, gathered by the renderer.
///
/// Image positions are in feature-cell units. `vis` holds `v(q), v(p), v(p')`
/// for the input camera. `mirror_valid` is false where the mirrored vertex does
/// not exist (its hand was removed from the scene).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointBatch {
    pub phi: Vec<f64>,
    pub dir: Vec<f64>,
    pub q_xy: Vec<(f64, f64)>,
    pub p_xy: Vec<(f64, f64)>,
    pub mirror_xy: Vec<(f64, f64)>,
    pub vis: Vec<[f64; 3]>,
    pub mirror_valid: Vec<bool>,
}

impl PointBatch {
    pub fn len(&self) -> usize {
        self.q_xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_xy.is_empty()
    }

    pub fn check(&self, cfg: &NetConfig) -> Result<()> {
        let n = self.len();
        let ok = self.phi.len() == n * cfg.pe_dim()
            && self.dir.len() == n * cfg.dir_dim()
            && self.p_xy.len() == n
            && self.mirror_xy.len() == n
            && self.vis.len() == n
            && self.mirror_valid.len() == n;
        if !ok {
            return Err(invalid(format!("point batch fields disagree on length {n}")));
        }
        if self.vis.iter().flatten().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("visibility inputs must be 0 or 1"));
        }
        Ok(())
    }

    /// Subset of points by index, in the given order.
    pub fn select(&self, idx: &[usize], cfg: &NetConfig) -> PointBatch {
        let (dp, dd) = (cfg.pe_dim(), cfg.dir_dim());
        PointBatch {
            phi: idx.iter().flat_map(|&i| self.phi[i * dp..(i + 1) * dp].iter().copied()).collect(),
            dir: idx.iter().flat_map(|&i| self.dir[i * dd..(i + 1) * dd].iter().copied()).collect(),
            q_xy: idx.iter().map(|&i| self.q_xy[i]).collect(),
            p_xy: idx.iter().map(|&i| self.p_xy[i]).collect(),
            mirror_xy: idx.iter().map(|&i| self.mirror_xy[i]).collect(),
            vis: idx.iter().map(|&i| self.vis[i]).collect(),
            mirror_valid: idx.iter().map(|&i| self.mirror_valid[i]).collect(),
        }
    }
}

/// Visibility-weighted concatenation for one branch.
#[derive(Clone, Copy, Debug)]
pub struct Fusion {
    /// `[N, 6]` (texture) or `[N, 4]` (geometry), each in (0, 1).
    pub weights: Var,
    pub fused: Var,
}

/// `[sin(2^k π x_i)]_i, [cos(2^k π x_i)]_i` for `k = 0..levels`.
pub fn positional_encode(x: [f64; 3], levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * levels);
    positional_encode_into(x, levels, &mut out);
    out
}

pub fn positional_encode_into(x: [f64; 3], levels: usize, out: &mut Vec<f64>) {
    for k in 0..levels {
        let f = (1u64 << k) as f64 * std::f64::consts::PI;
        out.extend(x.iter().map(|&v| (f * v).sin()));
        out.extend(x.iter().map(|&v| (f * v).cos()));
    }
}

/// Encoders, fusion weight networks, color and deviation heads, and the density
/// sharpness. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: NetConfig,
    pub texture_encoder: [Conv; 4],
    pub geometry_encoder: [Conv; 4],
    pub mu_texture: Mlp,
    pub mu_geometry: Mlp,
    pub color: Mlp,
    pub deviation: Mlp,
    pub w_raw: ParamId,
}

impl Generator {
    pub fn new<T: Real>(config: &NetConfig, seed: u64) -> (Generator, ParamStore<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (dt, dg, h, hm) = (config.texture_dim, config.geometry_dim, config.hidden, config.fusion_hidden);
        let texture_encoder = [
            Conv::new(&mut s, "tex.0", 3, dt, 3, 2, &mut rng),
            Conv::new(&mut s, "tex.1", dt, dt, 3, 2, &mut rng),
            Conv::new(&mut s, "tex.2", dt, dt, 3, 1, &mut rng),
            Conv::new(&mut s, "tex.3", dt, dt, 3, 1, &mut rng),
        ];
        let geometry_encoder = [
            Conv::new(&mut s, "geo.0", 3, dg, 3, 2, &mut rng),
            Conv::new(&mut s, "geo.1", dg, dg, 3, 2, &mut rng),
            Conv::new(&mut s, "geo.down", dg, dg, 3, 2, &mut rng),
            Conv::new(&mut s, "geo.up", dg, dg, 3, 1, &mut rng),
        ];
        let tex_in = 3 + config.texture_fused_dim();
        let geo_in = 3 + config.geometry_fused_dim();
        let mu_texture = Mlp::new(&mut s, "mu_tex", &[tex_in, hm, 6], &mut rng);
        let mu_geometry = Mlp::new(&mut s, "mu_geo", &[geo_in, hm, 4], &mut rng);
        let color = Mlp::new(&mut s, "color", &[config.texture_fused_dim() + config.dir_dim(), h, h, 3], &mut rng);
        let deviation = Mlp::new(&mut s, "deviation", &[config.geometry_fused_dim(), h, h, 1], &mut rng);
        let w_raw = s.add("density.w_raw", &[1, 1], vec![T::of(DensityParams::default().w_raw)]);
        let gen = Generator {
            config: config.clone(),
            texture_encoder,
            geometry_encoder,
            mu_texture,
            mu_geometry,
            color,
            deviation,
            w_raw,
        };
        (gen, s)
    }

    /// Runs both encoders on `image: [1, 3, H, W]` and pools the texture map over
    /// each hand's mask.
    pub fn encode<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        image: Var,
        masks: &[VisibilityMap; 2],
    ) -> Result<FeatureMaps> {
        let shape = g.shape(image).to_vec();
        let (h, w) = match shape.as_slice() {
            [1, 3, h, w] if h % 4 == 0 && w % 4 == 0 && *h > 0 && *w > 0 => (*h, *w),
            _ => return Err(invalid(format!("encoder input must be [1, 3, H, W] with H, W multiples of 4, got {shape:?}"))),
        };
        for m in masks {
            if m.width != w || m.height != h {
                return Err(invalid(format!("mask is {}x{}, image is {w}x{h}", m.width, m.height)));
            }
        }
        let [t0, t1, t2, t3] = &self.texture_encoder;
        let x = t0.forward(g, store, image)?;
        let x = g.relu(x);
        let x = t1.forward(g, store, x)?;
        let base = g.relu(x);
        let r = t2.forward(g, store, base)?;
        let r = g.relu(r);
        let r = t3.forward(g, store, r)?;
        let sum = g.add(base, r)?;
        let texture_map = g.relu(sum);

        let [g0, g1, down, up] = &self.geometry_encoder;
        let x = g0.forward(g, store, image)?;
        let x = g.relu(x);
        let x = g1.forward(g, store, x)?;
        let skip = g.relu(x);
        let d = down.forward(g, store, skip)?;
        let d = g.relu(d);
        let u = g.upsample2x(d)?;
        let (fh, fw) = (h / 4, w / 4);
        let u = g.slice(u, 2, 0, fh)?;
        let u = g.slice(u, 3, 0, fw)?;
        let u = up.forward(g, store, u)?;
        let u = g.relu(u);
        let geometry_map = g.add(skip, u)?;

        let global_left = masked_mean(g, texture_map, &masks[0])?;
        let global_right = masked_mean(g, texture_map, &masks[1])?;
        Ok(FeatureMaps { texture_map, geometry_map, global_left, global_right })
    }

    fn branch_features<T: Real>(
        &self,
        g: &mut Graph<T>,
        map: Var,
        batch: &PointBatch,
    ) -> Result<[Var; 3]> {
        let n = batch.len();
        let d = g.shape(map)[1];
        let cast = |xy: &[(f64, f64)]| -> Vec<(T, T)> { xy.iter().map(|&(x, y)| (T::of(x), T::of(y))).collect() };
        let k = g.bilinear_sample(map, &cast(&batch.q_xy))?;
        let features = self.config.features;
        let m = if features.uses_nearest() {
            g.bilinear_sample(map, &cast(&batch.p_xy))?
        } else {
            g.constant(vec![T::zero(); n * d], &[n, d])?
        };
        let nn = if features.uses_mirror() {
            let s = g.bilinear_sample(map, &cast(&batch.mirror_xy))?;
            if batch.mirror_valid.iter().all(|&v| v) {
                s
            } else {
                let keep: Vec<T> = batch.mirror_valid.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
                let keep = g.constant(keep, &[n, 1])?;
                g.mul_col(s, keep)?
            }
        } else {
            g.constant(vec![T::zero(); n * d], &[n, d])?
        };
        Ok([k, m, nn])
    }

    fn visibility_inputs(&self, batch: &PointBatch) -> Vec<f64> {
        let f = self.config.features;
        let mut out = Vec::with_capacity(3 * batch.len());
        for (v, &valid) in batch.vis.iter().zip(&batch.mirror_valid) {
            if !self.config.fusion_visibility {
                out.extend([0.0; 3]);
                continue;
            }
            out.push(v[0]);
            out.push(if f.uses_nearest() { v[1] } else { 0.0 });
            out.push(if f.uses_mirror() && valid { v[2] } else { 0.0 });
        }
        out
    }

    /// Weighted concatenation `[a_φ φ, a_k k, a_m m, a_n n, (a_gl g_l, a_gr g_r)]` with
    /// `a = sigmoid(μ(vis, features))`.
    pub fn fuse<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        branch: Branch,
        maps: &FeatureMaps,
        batch: &PointBatch,
    ) -> Result<Fusion> {
        batch.check(&self.config)?;
        let n = batch.len();
        let map = match branch {
            Branch::Texture => maps.texture_map,
            Branch::Geometry => maps.geometry_map,
        };
        let phi = g.constant_f64(&batch.phi, &[n, self.config.pe_dim()])?;
        let [k, m, nn] = self.branch_features(g, map, batch)?;
        let mut parts = vec![phi, k, m, nn];
        if branch == Branch::Texture {
            let gl = g.broadcast_rows(maps.global_left, n)?;
            let gr = g.broadcast_rows(maps.global_right, n)?;
            parts.push(gl);
            parts.push(gr);
        }
        let vis = g.constant_f64(&self.visibility_inputs(batch), &[n, 3])?;
        let feats = g.concat(&parts, 1)?;
        let mu_in = g.concat(&[vis, feats], 1)?;
        let mlp = match branch {
            Branch::Texture => &self.mu_texture,
            Branch::Geometry => &self.mu_geometry,
        };
        let logits = mlp.forward(g, store, mu_in)?;
        let weights = g.sigmoid(logits);
        let widths: Vec<usize> = parts.iter().map(|&p| g.shape(p)[1]).collect();
        let total: usize = widths.iter().sum();
        let mut expand = vec![T::zero(); widths.len() * total];
        let mut off = 0;
        for (i, &wd) in widths.iter().enumerate() {
            for j in off..off + wd {
                expand[i * total + j] = T::one();
            }
            off += wd;
        }
        let expand = g.constant(expand, &[widths.len(), total])?;
        let scale = g.matmul(weights, expand)?;
        let fused = g.mul(feats, scale)?;
        Ok(Fusion { weights, fused })
    }

    /// Colors `[N, 3]` in (0, 1) from texture-branch features and the target-ray
    /// direction encoding.
    pub fn color_head<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, fused: Var, batch: &PointBatch) -> Result<Var> {
        let n = g.shape(fused)[0];
        let dir = g.constant_f64(&batch.dir, &[n, self.config.dir_dim()])?;
        let x = g.concat(&[fused, dir], 1)?;
        let y = self.color.forward(g, store, x)?;
        Ok(g.sigmoid(y))
    }

    /// Deviations `[N, 1]` bounded by `delta_max` via tanh.
    pub fn deviation_head<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, fused: Var, delta_max: f64) -> Result<Var> {
        let y = self.deviation.forward(g, store, fused)?;
        let y = g.tanh(y);
        Ok(g.scale(y, T::of(delta_max)))
    }

    /// Parameter groups by network, for diagnostics and gradient checks.
    pub fn groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        let convs = |c: &[Conv; 4]| c.iter().flat_map(|c| [c.w, c.b]).collect::<Vec<_>>();
        vec![
            ("texture_encoder", convs(&self.texture_encoder)),
            ("geometry_encoder", convs(&self.geometry_encoder)),
            ("mu_texture", self.mu_texture.params()),
            ("mu_geometry", self.mu_geometry.params()),
            ("color", self.color.params()),
            ("deviation", self.deviation.params()),
            ("density", vec![self.w_raw]),
        ]
    }
}

/// Pooling weight of every feature cell: the fraction of its 4×4 pixel block inside `mask`.
pub fn cell_weights(mask: &VisibilityMap) -> Vec<f64> {
    let (fw, fh) = (mask.width / 4, mask.height / 4);
    let mut out = vec![0.0; fw * fh];
    for (i, o) in out.iter_mut().enumerate() {
        let (cx, cy) = (i % fw, i / fw);
        let mut acc = 0.0;
        for dy in 0..4 {
            for dx in 0..4 {
                acc += mask.get(4 * cx + dx, 4 * cy + dy);
            }
        }
        *o = acc / 16.0;
    }
    out
}

/// Mask-weighted mean of `map: [1, D, h, w]` as `[1, D]`; zeros for an empty mask.
fn masked_mean<T: Real>(g: &mut Graph<T>, map: Var, mask: &VisibilityMap) -> Result<Var> {
    let s = g.shape(map).to_vec();
    let (d, hw) = (s[1], s[2] * s[3]);
    let weights = cell_weights(mask);
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return g.constant(vec![T::zero(); d], &[1, d]);
    }
    let flat = g.reshape(map, &[d, hw])?;
    let wv = g.constant(weights.iter().map(|&v| T::of(v / total)).collect(), &[hw, 1])?;
    let mean = g.matmul(flat, wv)?;
    g.reshape(mean, &[1, d])
}

impl FeatureSet {
    pub fn uses_nearest(self) -> bool {
        matches!(self, FeatureSet::QP | FeatureSet::All)
    }

    pub fn uses_mirror(self) -> bool {
        matches!(self, FeatureSet::QMirror | FeatureSet::All)
    }
}
