//! Losses, the optimizer, checkpoints and alternating adversarial training.

mod adam;
pub mod checkpoint;
mod losses;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{Adam, OptimConfig};
pub use checkpoint::{Checkpoint, Record};
pub use losses::{loss_adv_discriminator, loss_adv_generator, loss_rgb, loss_vis, LossWeights, Perceptual, VIS_CLIP};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Camera, Ray, TriMesh};
use crate::networks::{Discriminator, Generator, NetConfig};
use crate::render::{pixel_seed, render_rays, InputView, PixelRect, RenderConfig, Scene};
use crate::scalar::{DType, Real};
use crate::visibility::{correspondence_map, silhouette_of, visibility_gt_of, VisibilityMap};

/// Which (input, target) camera pairs training draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    #[default]
    Any,
    Distinct,
    Same,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    /// Scenes per step, one patch each.
    pub batch_size: usize,
    pub log_every: u64,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub weights: LossWeights,
    pub optim: OptimConfig,
    pub pairs: PairMode,
    /// Seed of the frozen perceptual feature network.
    pub perceptual_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            seed: 0,
            batch_size: 2,
            log_every: 10,
            checkpoint_every: 0,
            weights: LossWeights::default(),
            optim: OptimConfig::default(),
            pairs: PairMode::Any,
            perceptual_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.optim.validate()?;
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(invalid("batch_size and log_every must be positive"));
        }
        Ok(())
    }

    /// The discriminator takes part only when one of its terms is weighted.
    pub fn adversarial(&self) -> bool {
        self.weights.adv > 0.0 || self.weights.vis > 0.0
    }
}

/// One scene prepared for training: every camera as a potential input view, with
/// silhouettes and correspondence maps per camera.
pub struct TrainScene {
    pub id: usize,
    pub scene: Scene,
    pub views: Vec<InputView>,
    pub silhouettes: Vec<VisibilityMap>,
    pub correspondence: Vec<Vec<f64>>,
    fake_gt: Vec<OnceLock<VisibilityMap>>,
}

impl TrainScene {
    pub fn new(id: usize, meshes: [TriMesh; 2], cameras: Vec<Camera>, images: Vec<Vec<f64>>) -> Result<TrainScene> {
        TrainScene::from_scene(id, Scene::new(meshes)?, cameras, images)
    }

    pub fn from_scene(id: usize, scene: Scene, cameras: Vec<Camera>, images: Vec<Vec<f64>>) -> Result<TrainScene> {
        if cameras.is_empty() || cameras.len() != images.len() {
            return Err(invalid(format!("scene {id}: {} cameras, {} images", cameras.len(), images.len())));
        }
        let (w, h) = (cameras[0].width, cameras[0].height);
        if cameras.iter().any(|c| c.width != w || c.height != h) {
            return Err(invalid(format!("scene {id}: cameras disagree on image size")));
        }
        let silhouettes = cameras.iter().map(|c| silhouette_of(&scene.caster, c)).collect();
        let correspondence = cameras.iter().map(|c| correspondence_map(&scene.caster, c)).collect();
        let k = cameras.len();
        let views = cameras.into_iter().zip(images).map(|(c, i)| InputView::new(&scene, c, i)).collect::<Result<_>>()?;
        Ok(TrainScene { id, scene, views, silhouettes, correspondence, fake_gt: (0..k * k).map(|_| OnceLock::new()).collect() })
    }

    pub fn camera_count(&self) -> usize {
        self.views.len()
    }

    /// Ground truth for a synthesized target: target pixels whose surface point the
    /// input camera sees.
    pub fn fake_visibility(&self, input: usize, target: usize) -> &VisibilityMap {
        let k = self.camera_count();
        self.fake_gt[input * k + target]
            .get_or_init(|| visibility_gt_of(&self.scene.caster, &self.views[input].camera, &self.views[target].camera))
    }
}

/// A training patch: the scene, input and target cameras, and the target window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Example {
    pub scene: usize,
    pub input: usize,
    pub target: usize,
    pub rect: PixelRect,
    pub seed: u64,
}

fn mix(a: u64, b: u64) -> u64 {
    pixel_seed(a, (b & 0xFFFF_FFFF) as usize, (b >> 32) as usize)
}

/// Draws a patch centered on a random foreground pixel of the target view.
pub fn sample_example<R: Rng>(scenes: &[TrainScene], pairs: PairMode, patch: usize, rng: &mut R) -> Example {
    let scene = rng.gen_range(0..scenes.len());
    let s = &scenes[scene];
    let k = s.camera_count();
    let input = rng.gen_range(0..k);
    let target = match pairs {
        PairMode::Any => rng.gen_range(0..k),
        PairMode::Same => input,
        PairMode::Distinct if k > 1 => (input + rng.gen_range(1..k)) % k,
        PairMode::Distinct => input,
    };
    let cam = &s.views[target].camera;
    let sil = &s.silhouettes[target];
    let fg: Vec<usize> = (0..sil.data.len()).filter(|&i| sil.data[i] > 0.5).collect();
    let center = if fg.is_empty() { rng.gen_range(0..sil.data.len()) } else { fg[rng.gen_range(0..fg.len())] };
    let (cc, cr) = (center % cam.width, center / cam.width);
    let p = patch.min(cam.width).min(cam.height);
    let col0 = cc.saturating_sub(p / 2).min(cam.width - p);
    let row0 = cr.saturating_sub(p / 2).min(cam.height - p);
    Example { scene, input, target, rect: PixelRect { col0, row0, width: p, height: p }, seed: rng.gen() }
}

/// Crops planar `[c, H, W]` data to `rect`, keeping the planar layout.
pub fn crop_planar(data: &[f64], channels: usize, width: usize, height: usize, rect: PixelRect) -> Vec<f64> {
    let mut out = Vec::with_capacity(channels * rect.width * rect.height);
    for c in 0..channels {
        for r in rect.row0..rect.row0 + rect.height {
            let base = c * width * height + r * width;
            out.extend_from_slice(&data[base + rect.col0..base + rect.col0 + rect.width]);
        }
    }
    out
}

/// Generator, discriminator and their parameters.
pub struct Model<T> {
    pub gen: Generator,
    pub gen_params: ParamStore<T>,
    pub disc: Discriminator,
    pub disc_params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: &NetConfig, seed: u64) -> Model<T> {
        let (gen, gen_params) = Generator::new(cfg, seed);
        let (disc, disc_params) = Discriminator::new(cfg, seed ^ 0xD15C);
        Model { gen, gen_params, disc, disc_params }
    }
}

/// SHA-256 over the architecture settings and precision, which decide whether a
/// checkpoint fits a model.
pub fn config_hash(net: &NetConfig, dtype: DType) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(net).expect("config serializes"));
    h.update([dtype.tag()]);
    h.finalize().into()
}

/// Loss values of one step, by term.
pub type Losses = BTreeMap<String, f64>;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub losses: Losses,
    pub lr: f64,
    pub skipped: u64,
    pub wall_ms: f64,
}

/// Training state: model, optimizers, and the step counter.
pub struct Trainer<T> {
    pub model: Model<T>,
    pub config: TrainConfig,
    pub render: RenderConfig,
    pub gen_opt: Adam<T>,
    pub disc_opt: Adam<T>,
    /// Completed steps.
    pub step: u64,
    perceptual: Perceptual<T>,
    hash: [u8; 32],
}

fn patch_var<T: Real>(g: &mut Graph<T>, rgb_rows: Var, p: usize) -> Result<Var> {
    let t = g.transpose(rgb_rows)?;
    g.reshape(t, &[1, 3, p, p])
}

impl<T: Real> Trainer<T> {
    pub fn new(net: &NetConfig, render: RenderConfig, config: TrainConfig) -> Result<Trainer<T>> {
        net.validate()?;
        render.validate()?;
        config.validate()?;
        if config.adversarial() && render.patch % 16 != 0 {
            return Err(invalid(format!(
                "adversarial terms need a patch size that is a multiple of 16, got {}",
                render.patch
            )));
        }
        if config.weights.vis > 0.0 && !net.disc_visibility_head {
            return Err(invalid("the visibility loss needs the discriminator's visibility head"));
        }
        let model = Model::new(net, config.seed);
        let gen_opt = Adam::new(&model.gen_params);
        let disc_opt = Adam::new(&model.disc_params);
        let perceptual = Perceptual::new(config.perceptual_seed);
        Ok(Trainer { model, render, gen_opt, disc_opt, step: 0, perceptual, hash: config_hash(net, T::DTYPE), config })
    }

    pub fn config_hash(&self) -> [u8; 32] {
        self.hash
    }

    fn examples(&self, scenes: &[TrainScene], step: u64, phase: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.config.seed, step), phase));
        (0..self.config.batch_size).map(|_| sample_example(scenes, self.config.pairs, self.render.patch, &mut rng)).collect()
    }

    /// Renders the example's patch on `g` and returns it as `[1, 3, P, P]`.
    fn render_example(&self, g: &mut Graph<T>, scenes: &[TrainScene], ex: &Example) -> Result<Var> {
        let s = &scenes[ex.scene];
        let view = &s.views[ex.input];
        let (w, h) = (view.camera.width, view.camera.height);
        let img = g.constant_f64(&view.image, &[1, 3, h, w])?;
        let maps = self.model.gen.encode(g, &self.model.gen_params, img, &view.masks)?;
        let target = &s.views[ex.target].camera;
        let rays: Vec<(Ray, u64)> = ex.rect.pixels().map(|(c, r)| (target.pixel_ray(c, r), pixel_seed(ex.seed, c, r))).collect();
        let out = render_rays(g, &self.model.gen, &self.model.gen_params, &s.scene, view, &maps, &rays, &self.render)?;
        patch_var(g, out.rgb, ex.rect.width)
    }

    /// Input crop, real target crop and target correspondence crop for the discriminator.
    fn conditioning(&self, g: &mut Graph<T>, scenes: &[TrainScene], ex: &Example) -> Result<(Var, Var, Var)> {
        let s = &scenes[ex.scene];
        let (w, h) = (s.views[0].camera.width, s.views[0].camera.height);
        let p = ex.rect.width;
        let inp = g.constant_f64(&crop_planar(&s.views[ex.input].image, 3, w, h, ex.rect), &[1, 3, p, p])?;
        let tgt = g.constant_f64(&crop_planar(&s.views[ex.target].image, 3, w, h, ex.rect), &[1, 3, p, p])?;
        let corr = g.constant_f64(&crop_planar(&s.correspondence[ex.target], 6, w, h, ex.rect), &[1, 6, p, p])?;
        Ok((inp, tgt, corr))
    }

    fn accumulate(g: &mut Graph<T>, acc: &mut Option<Var>, term: Var, weight: f64) -> Result<()> {
        let t = g.scale(term, T::of(weight));
        *acc = Some(match acc.take() {
            None => t,
            Some(a) => g.add(a, t)?,
        });
        Ok(())
    }

    /// Generator update on `examples` with the discriminator frozen. The visibility
    /// term compares the discriminator's map of the render with the target silhouette.
    pub fn generator_step(&mut self, scenes: &[TrainScene], examples: &[Example], lr: f64) -> Result<Losses> {
        let wts = self.config.weights.clone();
        let mut g = Graph::<T>::new();
        g.freeze(&self.model.disc_params);
        let mut total = None;
        let mut sums: Losses = BTreeMap::new();
        let nb = examples.len() as f64;
        for ex in examples {
            let pred = self.render_example(&mut g, scenes, ex)?;
            let (inp, tgt, corr) = self.conditioning(&mut g, scenes, ex)?;
            let l_rgb = loss_rgb(&mut g, pred, tgt)?;
            *sums.entry("rgb".into()).or_default() += g.scalar(l_rgb).f64() / nb;
            Self::accumulate(&mut g, &mut total, l_rgb, wts.rgb / nb)?;
            if wts.vgg > 0.0 {
                let l = self.perceptual.loss(&mut g, pred, tgt)?;
                *sums.entry("perc".into()).or_default() += g.scalar(l).f64() / nb;
                Self::accumulate(&mut g, &mut total, l, wts.vgg / nb)?;
            }
            if self.config.adversarial() {
                let d = self.model.disc.discriminate(&mut g, &self.model.disc_params, inp, pred, corr)?;
                if wts.adv > 0.0 {
                    let l = loss_adv_generator(&mut g, d.logit);
                    *sums.entry("adv_gen".into()).or_default() += g.scalar(l).f64() / nb;
                    Self::accumulate(&mut g, &mut total, l, wts.adv / nb)?;
                }
                if let (true, Some(v)) = (wts.vis > 0.0, d.vis_map) {
                    let s = &scenes[ex.scene];
                    let (w, h) = (s.views[0].camera.width, s.views[0].camera.height);
                    let gt = crop_planar(&s.silhouettes[ex.target].data, 1, w, h, ex.rect);
                    let l = loss_vis(&mut g, v, &gt)?;
                    *sums.entry("vis_gen".into()).or_default() += g.scalar(l).f64() / nb;
                    Self::accumulate(&mut g, &mut total, l, wts.vis / nb)?;
                }
            }
        }
        let total = total.ok_or_else(|| invalid("empty batch"))?;
        sums.insert("total_gen".into(), g.scalar(total).f64());
        let grads = g.backward(total)?;
        let grads = grads.for_store(&self.model.gen_params);
        drop(g);
        self.gen_opt.step(&mut self.model.gen_params, &grads, lr, &self.config.optim);
        Ok(sums)
    }

    /// Discriminator update with the generator frozen: real targets are labeled
    /// real with silhouette ground truth, detached renders fake with input-view
    /// visibility ground truth.
    pub fn discriminator_step(&mut self, scenes: &[TrainScene], examples: &[Example], lr: f64) -> Result<Losses> {
        let wts = self.config.weights.clone();
        let mut g = Graph::<T>::new();
        g.freeze(&self.model.gen_params);
        let mut total = None;
        let mut sums: Losses = BTreeMap::new();
        let nb = examples.len() as f64;
        for ex in examples {
            let fake = self.render_example(&mut g, scenes, ex)?;
            let (inp, tgt, corr) = self.conditioning(&mut g, scenes, ex)?;
            let real = self.model.disc.discriminate(&mut g, &self.model.disc_params, inp, tgt, corr)?;
            let synth = self.model.disc.discriminate(&mut g, &self.model.disc_params, inp, fake, corr)?;
            let l = loss_adv_discriminator(&mut g, real.logit, synth.logit)?;
            *sums.entry("adv_disc".into()).or_default() += g.scalar(l).f64() / nb;
            let mut term = l;
            if let (true, Some(vr), Some(vf)) = (wts.vis > 0.0, real.vis_map, synth.vis_map) {
                let s = &scenes[ex.scene];
                let (w, h) = (s.views[0].camera.width, s.views[0].camera.height);
                let gt_real = crop_planar(&s.silhouettes[ex.target].data, 1, w, h, ex.rect);
                let gt_fake = crop_planar(&s.fake_visibility(ex.input, ex.target).data, 1, w, h, ex.rect);
                let lr_ = loss_vis(&mut g, vr, &gt_real)?;
                let lf = loss_vis(&mut g, vf, &gt_fake)?;
                let lv = g.add(lr_, lf)?;
                *sums.entry("vis_disc".into()).or_default() += g.scalar(lv).f64() / nb;
                let lv = g.scale(lv, T::of(wts.vis));
                term = g.add(term, lv)?;
            }
            Self::accumulate(&mut g, &mut total, term, 1.0 / nb)?;
        }
        let total = total.ok_or_else(|| invalid("empty batch"))?;
        sums.insert("total_disc".into(), g.scalar(total).f64());
        let grads = g.backward(total)?;
        let grads = grads.for_store(&self.model.disc_params);
        drop(g);
        self.disc_opt.step(&mut self.model.disc_params, &grads, lr, &self.config.optim);
        Ok(sums)
    }

    /// One alternating step: generator, then discriminator when adversarial terms are on.
    pub fn train_step(&mut self, scenes: &[TrainScene]) -> Result<(Losses, f64)> {
        if scenes.is_empty() {
            return Err(invalid("training needs at least one scene"));
        }
        let lr = self.config.optim.lr_at(self.step, self.config.steps);
        let ex = self.examples(scenes, self.step, 0);
        let mut losses = self.generator_step(scenes, &ex, lr)?;
        if self.config.adversarial() {
            let ex = self.examples(scenes, self.step, 1);
            losses.extend(self.discriminator_step(scenes, &ex, lr)?);
        }
        self.step += 1;
        Ok((losses, lr))
    }

    /// Runs until `config.steps`, reporting every `log_every`-th step and calling
    /// `on_checkpoint` every `checkpoint_every` steps.
    pub fn run(
        &mut self,
        scenes: &[TrainScene],
        mut on_log: impl FnMut(&LogRecord) -> Result<()>,
        mut on_checkpoint: impl FnMut(&Trainer<T>) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.config.steps {
            let t0 = Instant::now();
            let (losses, lr) = self.train_step(scenes)?;
            if self.step % self.config.log_every == 0 {
                let rec = LogRecord {
                    step: self.step,
                    losses,
                    lr,
                    skipped: self.gen_opt.skipped + self.disc_opt.skipped,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                };
                on_log(&rec)?;
            }
            if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        let stores = [("gen", &self.model.gen_params, &self.gen_opt), ("disc", &self.model.disc_params, &self.disc_opt)];
        for (prefix, store, opt) in stores {
            for (id, p) in store.iter() {
                c.push(Record::from_reals(format!("{prefix}.{}", p.name), &p.shape, &p.values));
                c.push(Record::from_reals(format!("adam.{prefix}.m.{}", p.name), &p.shape, &opt.m[id.0]));
                c.push(Record::from_reals(format!("adam.{prefix}.v.{}", p.name), &p.shape, &opt.v[id.0]));
            }
        }
        c.push(Record::from_u64s("meta.step", &[self.step]));
        c.push(Record::from_u64s(
            "meta.adam",
            &[self.gen_opt.t, self.gen_opt.skipped, self.disc_opt.t, self.disc_opt.skipped],
        ));
        let hash: Vec<u64> = self.hash.chunks(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        c.push(Record::from_u64s("meta.config_hash", &hash));
        c
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Replaces parameters, optimizer state and step from `ckpt`. On any error the
    /// trainer is left untouched. A config-hash mismatch is an error unless
    /// `ignore_hash` is set.
    pub fn restore(&mut self, ckpt: &Checkpoint, path: &Path, ignore_hash: bool) -> Result<()> {
        let fail = |record: &str, reason: String| Error::Checkpoint { path: path.to_path_buf(), record: record.into(), reason };
        let meta = |name: &str, len: usize| -> Result<Vec<u64>> {
            let r = ckpt.get(name).ok_or_else(|| fail(name, "missing".into()))?;
            let v = r.to_u64s().ok_or_else(|| fail(name, "expected u64 data".into()))?;
            if v.len() != len {
                return Err(fail(name, format!("expected {len} values, found {}", v.len())));
            }
            Ok(v)
        };
        let hash = meta("meta.config_hash", 4)?;
        let ours: Vec<u64> = self.hash.chunks(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        if hash != ours && !ignore_hash {
            return Err(fail("meta.config_hash", "checkpoint was written for a different model configuration".into()));
        }
        let step = meta("meta.step", 1)?[0];
        let adam = meta("meta.adam", 4)?;
        let tensor = |name: String, shape: &[usize]| -> Result<Vec<T>> {
            let r = ckpt.get(&name).ok_or_else(|| fail(&name, "missing".into()))?;
            if r.shape.iter().map(|&d| d as usize).collect::<Vec<_>>() != shape {
                return Err(fail(&name, format!("shape {:?}, model expects {shape:?}", r.shape)));
            }
            r.to_reals::<T>().ok_or_else(|| fail(&name, format!("dtype {:?}, model uses {:?}", r.dtype, T::DTYPE)))
        };
        let load = |prefix: &str, store: &ParamStore<T>, opt: &Adam<T>| -> Result<(ParamStore<T>, Adam<T>)> {
            let mut s = store.clone();
            let mut o = opt.clone();
            for (i, p) in s.iter_mut().enumerate() {
                p.values = tensor(format!("{prefix}.{}", p.name), &p.shape)?;
                o.m[i] = tensor(format!("adam.{prefix}.m.{}", p.name), &p.shape)?;
                o.v[i] = tensor(format!("adam.{prefix}.v.{}", p.name), &p.shape)?;
            }
            Ok((s, o))
        };
        let (mut gp, mut go) = load("gen", &self.model.gen_params, &self.gen_opt)?;
        let (mut dp, mut dopt) = load("disc", &self.model.disc_params, &self.disc_opt)?;
        (go.t, go.skipped, dopt.t, dopt.skipped) = (adam[0], adam[1], adam[2], adam[3]);
        std::mem::swap(&mut self.model.gen_params, &mut gp);
        std::mem::swap(&mut self.model.disc_params, &mut dp);
        self.gen_opt = go;
        self.disc_opt = dopt;
        self.step = step;
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path, ignore_hash: bool) -> Result<()> {
        let c = Checkpoint::load(path)?;
        self.restore(&c, path, ignore_hash)
    }
}
