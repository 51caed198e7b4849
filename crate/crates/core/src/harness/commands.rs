//! `synth`, `train`, `render`, `eval` and `gradcheck`.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Precision, RunConfig};
use super::dataset::{load_scene, load_split, synthesize, Manifest, SceneData, Split};
use super::gradcheck::{run_suite, SuiteReport, DEFAULT_TOL};
use super::image::{masked_psnr, psnr, ssim, RgbImage};
use crate::autodiff::Graph;
use crate::error::{invalid, io_err, Error, Result};
use crate::geometry::HandLabel;
use crate::render::{render_image, InputView, PatchRender};
use crate::scalar::Real;
use crate::train::{LogRecord, Model, TrainScene, Trainer};
use crate::visibility::{silhouette_of, visibility_gt_of, VisibilityMap};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// Exit status for a failed command.
pub fn exit_code(_err: &Error) -> i32 {
    EXIT_VALIDATION
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(io_err(path))
}

/// Creates the run directory and stores the resolved configuration in it.
pub fn prepare_run_dir(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.run_dir)?;
    let path = cfg.run_dir.join("resolved_config.json");
    fs::write(&path, cfg.to_json()).map_err(io_err(&path))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest> {
    prepare_run_dir(cfg)?;
    synthesize(&cfg.dataset)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub log: PathBuf,
    pub checkpoint: PathBuf,
    pub first: Option<LogRecord>,
    pub last: Option<LogRecord>,
    pub eval: Option<EvalReport>,
}

pub fn train_scenes(cfg: &RunConfig) -> Result<Vec<TrainScene>> {
    let data = load_split(&cfg.dataset.dir, Split::Train, cfg.train_scene_limit)?;
    if data.is_empty() {
        return Err(invalid("the training split is empty"));
    }
    data.iter().map(|d| d.train_scene(None)).collect()
}

fn train_typed<T: Real>(cfg: &RunConfig, scenes: &[TrainScene], evaluate: bool) -> Result<TrainSummary> {
    let mut trainer = Trainer::<T>::new(&cfg.net, cfg.render.clone(), cfg.train.clone())?;
    let resuming = cfg.checkpoint.is_some();
    if let Some(path) = &cfg.checkpoint {
        trainer.load_checkpoint(path, cfg.ignore_config_hash)?;
    }
    let log_path = cfg.run_dir.join("train_log.ndjson");
    let mut log = if resuming {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(io_err(&log_path))?;
    let ckpt_dir = cfg.run_dir.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let (mut first, mut last) = (None, None);
    trainer.run(
        scenes,
        |rec| {
            let line = serde_json::to_string(rec)?;
            writeln!(log, "{line}").map_err(io_err(&log_path))?;
            first.get_or_insert_with(|| rec.clone());
            last = Some(rec.clone());
            Ok(())
        },
        |t| t.save_checkpoint(&ckpt_dir.join(format!("step_{:06}.ckpt", t.step))),
    )?;
    let checkpoint = cfg.run_dir.join("checkpoint.ckpt");
    trainer.save_checkpoint(&checkpoint)?;
    let eval = if evaluate { Some(evaluate_model(cfg, &trainer.model)?) } else { None };
    if let Some(e) = &eval {
        write_json(&cfg.run_dir.join("final_metrics.json"), e)?;
    }
    Ok(TrainSummary { steps: trainer.step, log: log_path, checkpoint, first, last, eval })
}

/// Trains on the configured split and evaluates on held-out scenes when `evaluate`.
pub fn cmd_train(cfg: &RunConfig, evaluate: bool) -> Result<TrainSummary> {
    prepare_run_dir(cfg)?;
    let scenes = train_scenes(cfg)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &scenes, evaluate),
        Precision::F64 => train_typed::<f64>(cfg, &scenes, evaluate),
    }
}

/// Model restored from `cfg.checkpoint`.
pub fn load_model<T: Real>(cfg: &RunConfig) -> Result<Model<T>> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("a checkpoint path is required".into()))?;
    let mut trainer = Trainer::<T>::new(&cfg.net, cfg.render.clone(), cfg.train.clone())?;
    trainer.load_checkpoint(path, cfg.ignore_config_hash)?;
    Ok(trainer.model)
}

pub fn to_image(r: &PatchRender) -> RgbImage {
    RgbImage { width: r.width, height: r.height, data: r.rgb.clone() }
}

/// Renders `target` from `input`, optionally replacing the input image.
pub fn render_view<T: Real>(
    model: &Model<T>,
    scene: &TrainScene,
    input: usize,
    target: usize,
    input_image: Option<&RgbImage>,
    cfg: &RunConfig,
) -> Result<RgbImage> {
    let k = scene.camera_count();
    if input >= k || target >= k {
        return Err(invalid(format!("scene {} has {k} cameras; asked for {input} -> {target}", scene.id)));
    }
    let replaced;
    let view = match input_image {
        Some(img) => {
            replaced = InputView::new(&scene.scene, scene.views[input].camera, img.data.clone())?;
            &replaced
        }
        None => &scene.views[input],
    };
    let target_cam = &scene.views[target].camera;
    let r = render_image(&model.gen, &model.gen_params, &scene.scene, view, target_cam, &cfg.render, cfg.eval.seed)?;
    Ok(to_image(&r))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderRequest {
    pub scene: usize,
    pub input_camera: usize,
    /// `None` renders every camera of the scene.
    pub target_camera: Option<usize>,
    pub exclude_hand: Option<HandLabel>,
    pub dump_visibility: bool,
}

/// Discriminator visibility map for `render` as the target of `input`.
fn predicted_visibility<T: Real>(model: &Model<T>, scene: &TrainScene, input: usize, target: usize, render: &RgbImage) -> Result<Option<VisibilityMap>> {
    let (w, h) = (render.width, render.height);
    if !model.disc.has_visibility_head() || w % 16 != 0 || h % 16 != 0 {
        return Ok(None);
    }
    let mut g = Graph::<T>::new();
    g.freeze(&model.disc_params);
    let inp = g.constant_f64(&scene.views[input].image, &[1, 3, h, w])?;
    let tgt = g.constant_f64(&render.data, &[1, 3, h, w])?;
    let corr = g.constant_f64(&scene.correspondence[target], &[1, 6, h, w])?;
    let out = model.disc.discriminate(&mut g, &model.disc_params, inp, tgt, corr)?;
    Ok(out.vis_map.map(|v| VisibilityMap { width: w, height: h, data: g.value(v).iter().map(|x| x.f64()).collect() }))
}

fn render_typed<T: Real>(cfg: &RunConfig, req: &RenderRequest) -> Result<Vec<PathBuf>> {
    let model = load_model::<T>(cfg)?;
    let data = load_scene(&cfg.dataset.dir, req.scene)?;
    let scene = data.train_scene(req.exclude_hand)?;
    let out_dir = cfg.run_dir.join("render");
    ensure_dir(&out_dir)?;
    let targets: Vec<usize> = match req.target_camera {
        Some(t) => vec![t],
        None => (0..scene.camera_count()).collect(),
    };
    let tag = match req.exclude_hand {
        Some(HandLabel::Left) => "_noleft",
        Some(HandLabel::Right) => "_noright",
        None => "",
    };
    let mut written = Vec::new();
    for t in targets {
        let stem = format!("scene_{:04}_in{}_tgt{}{}", req.scene, req.input_camera, t, tag);
        let img = render_view(&model, &scene, req.input_camera, t, None, cfg)?;
        let path = out_dir.join(format!("{stem}.ppm"));
        img.write_ppm(&path)?;
        written.push(path);
        if req.dump_visibility {
            let cam_in = &scene.views[req.input_camera].camera;
            let cam_t = &scene.views[t].camera;
            let mut maps = vec![
                ("vt_real", silhouette_of(&scene.scene.caster, cam_t)),
                ("vt_fake", visibility_gt_of(&scene.scene.caster, cam_in, cam_t)),
            ];
            if let Some(v) = predicted_visibility(&model, &scene, req.input_camera, t, &img)? {
                maps.push(("v_pred", v));
            }
            for (name, m) in maps {
                let path = out_dir.join(format!("{stem}_{name}.pgm"));
                m.write_pgm(&path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

pub fn cmd_render(cfg: &RunConfig, req: &RenderRequest) -> Result<Vec<PathBuf>> {
    prepare_run_dir(cfg)?;
    match cfg.precision {
        Precision::F32 => render_typed::<f32>(cfg, req),
        Precision::F64 => render_typed::<f64>(cfg, req),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR over target-silhouette pixels, averaged over pairs with a foreground.
    pub foreground_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub scene: usize,
    pub input: usize,
    pub target: usize,
    pub yaw_deg: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub foreground_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionMetrics {
    pub ratio: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Metrics,
    pub yaw_threshold_deg: f64,
    /// Pairs whose cameras differ by more than the threshold; absent when there are none.
    pub large_yaw: Option<Metrics>,
    pub occlusion: Vec<OcclusionMetrics>,
    pub lpips: String,
    pub pairs: Vec<PairMetrics>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let fmt = |m: &Metrics| {
            let fg = m.foreground_psnr.map_or("n/a".to_string(), |v| format!("{v:.3}"));
            format!("PSNR {:.3} dB, SSIM {:.4}, foreground PSNR {} ({} pairs)", m.psnr, m.ssim, fg, m.count)
        };
        let mut s = format!("overall: {}\n", fmt(&self.overall));
        match &self.large_yaw {
            Some(m) => s += &format!("yaw > {}°: {}\n", self.yaw_threshold_deg, fmt(m)),
            None => s += &format!("yaw > {}°: absent (no pairs)\n", self.yaw_threshold_deg),
        }
        for o in &self.occlusion {
            s += &format!("occlusion {:.2}: {}\n", o.ratio, fmt(&o.metrics));
        }
        s += &format!("LPIPS: {}\n", self.lpips);
        s
    }
}

fn aggregate<'a>(pairs: impl Iterator<Item = &'a PairMetrics>) -> Option<Metrics> {
    let (mut n, mut p, mut s, mut fg, mut nfg) = (0, 0.0, 0.0, 0.0, 0);
    for m in pairs {
        n += 1;
        p += m.psnr;
        s += m.ssim;
        if let Some(f) = m.foreground_psnr {
            fg += f;
            nfg += 1;
        }
    }
    (n > 0).then(|| Metrics { count: n, psnr: p / n as f64, ssim: s / n as f64, foreground_psnr: (nfg > 0).then(|| fg / nfg as f64) })
}

fn pair_metrics<T: Real>(model: &Model<T>, data: &SceneData, scene: &TrainScene, target: usize, input_image: Option<&RgbImage>, cfg: &RunConfig) -> Result<PairMetrics> {
    let input = cfg.eval.input_camera;
    let pred = render_view(model, scene, input, target, input_image, cfg)?;
    let gt = &data.images[target];
    Ok(PairMetrics {
        scene: data.spec.id,
        input,
        target,
        yaw_deg: data.spec.relative_yaw(input, target),
        psnr: psnr(&pred, gt)?,
        ssim: ssim(&pred, gt)?,
        foreground_psnr: masked_psnr(&pred, gt, &scene.silhouettes[target])?,
    })
}

/// Renders every camera of each evaluated scene from the configured input
/// camera, plus the centered-occlusion variants of the input image.
pub fn evaluate_model<T: Real>(cfg: &RunConfig, model: &Model<T>) -> Result<EvalReport> {
    let data = load_split(&cfg.dataset.dir, cfg.eval.split, cfg.eval.max_scenes)?;
    evaluate_scenes(cfg, model, &data)
}

pub fn evaluate_scenes<T: Real>(cfg: &RunConfig, model: &Model<T>, data: &[SceneData]) -> Result<EvalReport> {
    let mut pairs = Vec::new();
    let mut occluded: Vec<Vec<PairMetrics>> = vec![Vec::new(); cfg.eval.occlusion_ratios.len()];
    for d in data {
        let scene = d.train_scene(None)?;
        let input = cfg.eval.input_camera;
        if input >= scene.camera_count() {
            return Err(invalid(format!("input camera {input} out of range for scene {}", d.spec.id)));
        }
        for t in 0..scene.camera_count() {
            pairs.push(pair_metrics(model, d, &scene, t, None, cfg)?);
            for (k, &ratio) in cfg.eval.occlusion_ratios.iter().enumerate() {
                let img = d.images[input].occluded_center(ratio);
                occluded[k].push(pair_metrics(model, d, &scene, t, Some(&img), cfg)?);
            }
        }
    }
    let thr = cfg.eval.yaw_threshold_deg;
    Ok(EvalReport {
        overall: aggregate(pairs.iter()).unwrap_or_default(),
        yaw_threshold_deg: thr,
        large_yaw: aggregate(pairs.iter().filter(|p| p.yaw_deg > thr)),
        occlusion: cfg
            .eval
            .occlusion_ratios
            .iter()
            .zip(&occluded)
            .map(|(&ratio, ps)| OcclusionMetrics { ratio, metrics: aggregate(ps.iter()).unwrap_or_default() })
            .collect(),
        lpips: "n/a".into(),
        pairs,
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    prepare_run_dir(cfg)?;
    let report = match cfg.precision {
        Precision::F32 => evaluate_model(cfg, &load_model::<f32>(cfg)?)?,
        Precision::F64 => evaluate_model(cfg, &load_model::<f64>(cfg)?)?,
    };
    write_json(&cfg.run_dir.join("eval_report.json"), &report)?;
    Ok(report)
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<SuiteReport> {
    prepare_run_dir(cfg)?;
    let report = run_suite(DEFAULT_TOL)?;
    write_json(&cfg.run_dir.join("gradcheck.json"), &report)?;
    Ok(report)
}

