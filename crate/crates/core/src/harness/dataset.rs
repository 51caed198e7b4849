//! Synthetic two-hand dataset: procedural poses, cameras on a view sphere, and
//! ray-cast reference images with a skin-like texture from canonical coordinates.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use crate::error::{invalid, io_err, Result};
use crate::geometry::{generate_hand_proxy, Camera, HandLabel, HandPose, TriMesh, Vec3};
use crate::render::{pixel_seed, Scene};
use crate::sdf::{is_inside, unsigned_distance};
use crate::train::TrainScene;
use crate::visibility::{correspondence_map, hand_masks, SceneCaster};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub dir: PathBuf,
    pub seed: u64,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Cameras per scene, spread evenly in azimuth with jitter.
    pub cameras: usize,
    pub image_size: usize,
    pub fov_deg: f64,
    /// Camera elevation range in degrees.
    pub elevation_deg: [f64; 2],
    /// Azimuth jitter around the even spread, in degrees.
    pub azimuth_jitter_deg: f64,
    /// Scenes with even ids place the hands within this gap of each other.
    pub touching_distance: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            dir: PathBuf::from("data/synth"),
            seed: 0,
            train_scenes: 64,
            test_scenes: 8,
            cameras: 4,
            image_size: 64,
            fov_deg: 40.0,
            elevation_deg: [-20.0, 35.0],
            azimuth_jitter_deg: 15.0,
            touching_distance: 0.05,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_scenes + self.test_scenes == 0 {
            return Err(invalid("dataset needs at least one scene"));
        }
        if self.cameras == 0 || self.image_size < 4 {
            return Err(invalid("dataset needs at least one camera and images of at least 4x4"));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 170.0) {
            return Err(invalid(format!("fov_deg {} outside (1, 170)", self.fov_deg)));
        }
        let [lo, hi] = self.elevation_deg;
        if !(lo <= hi && lo > -89.0 && hi < 89.0) {
            return Err(invalid("elevation_deg must be an ordered range inside (-89, 89)"));
        }
        if !(self.touching_distance > 0.0) || !(self.azimuth_jitter_deg >= 0.0) {
            return Err(invalid("touching_distance must be positive and azimuth jitter non-negative"));
        }
        Ok(())
    }

    pub fn scene_count(&self) -> usize {
        self.train_scenes + self.test_scenes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Everything needed to regenerate one scene exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub id: usize,
    pub split: Split,
    /// `[left, right]`; the left pose is mirrored when generating its mesh.
    pub poses: [HandPose; 2],
    pub cameras: Vec<Camera>,
    pub azimuths_deg: Vec<f64>,
    pub skin: [f64; 3],
    pub touching: bool,
    /// Smallest vertex-to-surface distance between the two hands.
    pub hand_gap: f64,
}

impl SceneSpec {
    pub fn meshes(&self) -> Result<[TriMesh; 2]> {
        Ok([generate_hand_proxy(&self.poses[0], HandLabel::Left)?, generate_hand_proxy(&self.poses[1], HandLabel::Right)?])
    }

    /// Absolute azimuth difference between two cameras, in `[0, 180]` degrees.
    pub fn relative_yaw(&self, a: usize, b: usize) -> f64 {
        let d = (self.azimuths_deg[a] - self.azimuths_deg[b]).rem_euclid(360.0);
        d.min(360.0 - d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub touching: usize,
}

impl Manifest {
    pub fn ids(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

fn gap_between(a: &TriMesh, b: &TriMesh) -> f64 {
    let ca = SceneCaster::new(vec![a.clone()]);
    let cb = SceneCaster::new(vec![b.clone()]);
    let one = |m: &TriMesh, c: &SceneCaster| m.vertices.iter().map(|&v| unsigned_distance(c, v)).fold(f64::INFINITY, f64::min);
    one(a, &cb).min(one(b, &ca))
}

fn interpenetrate(a: &TriMesh, b: &TriMesh) -> bool {
    let ca = SceneCaster::new(vec![a.clone()]);
    let cb = SceneCaster::new(vec![b.clone()]);
    a.vertices.iter().any(|&v| is_inside(&cb, v)) || b.vertices.iter().any(|&v| is_inside(&ca, v))
}

fn jittered_pose<R: Rng>(rng: &mut R) -> HandPose {
    let mut pose = HandPose::random_articulation(rng, -0.2, 1.2);
    pose.rotation = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -PI / 2.0 + rng.gen_range(-0.4..0.4)];
    pose.translation = [0.0, rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
    pose
}

/// Poses whose hands face each other across a gap of roughly `target`. The
/// separation along x is bisected until the gap first reaches `target`.
fn separated_poses<R: Rng>(rng: &mut R, target: f64) -> Result<([HandPose; 2], f64)> {
    let (mut left, mut right) = (jittered_pose(rng), jittered_pose(rng));
    let at = |s: f64, left: &mut HandPose, right: &mut HandPose| -> Result<(f64, bool)> {
        left.translation[0] = s;
        right.translation[0] = s;
        let l = generate_hand_proxy(left, HandLabel::Left)?;
        let r = generate_hand_proxy(right, HandLabel::Right)?;
        let gap = gap_between(&l, &r);
        Ok((gap, gap >= target && !interpenetrate(&l, &r)))
    };
    let (mut lo, mut hi) = (0.0, 2.0);
    if !at(hi, &mut left, &mut right)?.1 {
        return Err(invalid("hands overlap even at the widest separation"));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if at(mid, &mut left, &mut right)?.1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (gap, _) = at(hi, &mut left, &mut right)?;
    Ok(([left, right], gap))
}

fn scene_rng(seed: u64, id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(pixel_seed(seed ^ 0x5CE_E5CE, id, 0))
}

pub fn generate_scene(cfg: &DatasetConfig, id: usize) -> Result<SceneSpec> {
    let split = if id < cfg.train_scenes { Split::Train } else { Split::Test };
    let mut rng = scene_rng(cfg.seed, id);
    let touching = id % 2 == 0;
    let target = if touching {
        rng.gen_range(0.2..0.8) * cfg.touching_distance
    } else {
        cfg.touching_distance * rng.gen_range(2.0..8.0)
    };
    let (poses, hand_gap) = separated_poses(&mut rng, target)?;
    let spec = SceneSpec { id, split, poses, cameras: vec![], azimuths_deg: vec![], skin: [0.0; 3], touching, hand_gap };
    let meshes = spec.meshes()?;
    let bounds = meshes[0].bounds().union(meshes[1].bounds());
    let center = bounds.center();
    let fov = cfg.fov_deg.to_radians();
    let radius = 1.1 * 0.5 * bounds.diagonal() / (0.5 * fov).sin();
    let base = rng.gen_range(0.0..360.0);
    let mut cameras = Vec::with_capacity(cfg.cameras);
    let mut azimuths = Vec::with_capacity(cfg.cameras);
    for k in 0..cfg.cameras {
        let jitter = if cfg.azimuth_jitter_deg > 0.0 { rng.gen_range(-cfg.azimuth_jitter_deg..=cfg.azimuth_jitter_deg) } else { 0.0 };
        let az = (base + 360.0 * k as f64 / cfg.cameras as f64 + jitter).rem_euclid(360.0);
        let el = rng.gen_range(cfg.elevation_deg[0]..=cfg.elevation_deg[1]).to_radians();
        let (a, e) = (az.to_radians(), el);
        let eye = center + Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin()) * radius;
        cameras.push(Camera::look_at(eye, center, Vec3::new(0.0, 0.0, 1.0), fov, cfg.image_size, cfg.image_size));
        azimuths.push(az);
    }
    let tone = rng.gen_range(0.7..1.1);
    let base_skin: [f64; 3] = [0.88, 0.66, 0.54];
    let skin = base_skin.map(|c| (c * tone + rng.gen_range(-0.04f64..0.04)).clamp(0.3, 1.0));
    Ok(SceneSpec { cameras, azimuths_deg: azimuths, skin, ..spec })
}

/// Texture multiplier at canonical coordinate `c`, in `[0.55, 1]`.
pub fn skin_pattern(c: Vec3) -> f64 {
    let creases = (2.0 * PI * 5.0 * c.z).sin();
    let mottling = (2.0 * PI * 3.0 * c.x).sin() * (2.0 * PI * 2.0 * c.y + 1.0).cos();
    0.775 + 0.15 * creases + 0.075 * mottling
}

/// Ray-cast reference image: skin color times texture times headlight shading,
/// black background, quantized to 8 bits. A pixel is non-zero exactly where its
/// center ray hits a mesh.
pub fn render_reference(caster: &SceneCaster, camera: &Camera, skin: [f64; 3]) -> RgbImage {
    let n = camera.width * camera.height;
    let mut data = vec![0.0; 3 * n];
    for (i, h) in caster.first_hits(camera).iter().enumerate() {
        let Some(h) = h else { continue };
        let [a, b, c] = caster.meshes[h.triangle.slot].triangle(h.triangle.face);
        let normal = (b - a).cross(c - a).normalized();
        let ray = camera.pixel_ray(i % camera.width, i / camera.width);
        let shade = 0.35 + 0.65 * normal.dot(ray.direction).abs();
        let k = skin_pattern(caster.hit_canonical(h)) * shade;
        for ch in 0..3 {
            data[ch * n + i] = skin[ch] * k;
        }
    }
    RgbImage { width: camera.width, height: camera.height, data }.quantized()
}

/// One scene with meshes and reference images in memory.
pub struct SceneData {
    pub spec: SceneSpec,
    pub meshes: [TriMesh; 2],
    pub images: Vec<RgbImage>,
}

impl SceneData {
    pub fn generate(cfg: &DatasetConfig, id: usize) -> Result<SceneData> {
        let spec = generate_scene(cfg, id)?;
        let meshes = spec.meshes()?;
        let caster = SceneCaster::new(meshes.to_vec());
        let images = spec.cameras.iter().map(|c| render_reference(&caster, c, spec.skin)).collect();
        Ok(SceneData { spec, meshes, images })
    }

    /// Training view of the scene, optionally with one hand removed.
    pub fn train_scene(&self, exclude: Option<HandLabel>) -> Result<TrainScene> {
        let scene = match exclude {
            None => Scene::new(self.meshes.clone())?,
            Some(h) => Scene::without(self.meshes.clone(), h)?,
        };
        TrainScene::from_scene(self.spec.id, scene, self.spec.cameras.clone(), self.images.iter().map(|i| i.data.clone()).collect())
    }
}

pub fn scene_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("scene_{id:04}"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_scene(root: &Path, data: &SceneData) -> Result<()> {
    let dir = scene_dir(root, data.spec.id);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write(&dir.join("scene.json"), serde_json::to_string_pretty(&data.spec)?.as_bytes())?;
    data.meshes[0].write_obj(&dir.join("left.obj"))?;
    data.meshes[1].write_obj(&dir.join("right.obj"))?;
    let caster = SceneCaster::new(data.meshes.to_vec());
    for (k, (cam, img)) in data.spec.cameras.iter().zip(&data.images).enumerate() {
        img.write_ppm(&dir.join(format!("image_{k}.ppm")))?;
        let [ml, mr] = hand_masks(&caster, cam);
        ml.write_pgm(&dir.join(format!("mask_{k}_left.pgm")))?;
        mr.write_pgm(&dir.join(format!("mask_{k}_right.pgm")))?;
        let corr = correspondence_map(&caster, cam);
        let n = cam.width * cam.height;
        for (h, name) in [(0, "left"), (1, "right")] {
            let img = RgbImage { width: cam.width, height: cam.height, data: corr[3 * h * n..3 * (h + 1) * n].to_vec() };
            img.write_ppm(&dir.join(format!("corr_{k}_{name}.ppm")))?;
        }
    }
    Ok(())
}

/// Writes every scene and the manifest under `cfg.dir`.
pub fn synthesize(cfg: &DatasetConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.dir).map_err(io_err(&cfg.dir))?;
    let mut manifest = Manifest { config: cfg.clone(), train: vec![], test: vec![], touching: 0 };
    for id in 0..cfg.scene_count() {
        let data = SceneData::generate(cfg, id)?;
        write_scene(&cfg.dir, &data)?;
        manifest.touching += data.spec.touching as usize;
        match data.spec.split {
            Split::Train => manifest.train.push(id),
            Split::Test => manifest.test.push(id),
        }
    }
    let path = cfg.dir.join("manifest.json");
    write(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a scene back: meshes are regenerated from the stored poses, images read
/// from disk.
pub fn load_scene(root: &Path, id: usize) -> Result<SceneData> {
    let dir = scene_dir(root, id);
    let path = dir.join("scene.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let spec: SceneSpec = serde_json::from_str(&text)?;
    if spec.id != id {
        return Err(invalid(format!("{} describes scene {}, expected {id}", path.display(), spec.id)));
    }
    let meshes = spec.meshes()?;
    let images = (0..spec.cameras.len())
        .map(|k| RgbImage::read_ppm(&dir.join(format!("image_{k}.ppm"))))
        .collect::<Result<Vec<_>>>()?;
    for (k, (img, cam)) in images.iter().zip(&spec.cameras).enumerate() {
        if img.width != cam.width || img.height != cam.height {
            return Err(invalid(format!("scene {id} image {k} does not match its camera")));
        }
    }
    Ok(SceneData { spec, meshes, images })
}

pub fn load_split(root: &Path, split: Split, limit: Option<usize>) -> Result<Vec<SceneData>> {
    let manifest = load_manifest(root)?;
    let ids = manifest.ids(split);
    let n = limit.map_or(ids.len(), |l| l.min(ids.len()));
    ids[..n].iter().map(|&id| load_scene(root, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visibility::silhouette_of;

    fn small() -> DatasetConfig {
        DatasetConfig { train_scenes: 3, test_scenes: 1, image_size: 24, ..DatasetConfig::default() }
    }

    #[test]
    fn scenes_are_reproducible_and_meet_their_gap() {
        let cfg = small();
        for id in 0..4 {
            let a = generate_scene(&cfg, id).unwrap();
            assert_eq!(a, generate_scene(&cfg, id).unwrap());
            let m = a.meshes().unwrap();
            if a.touching {
                assert!(a.hand_gap <= cfg.touching_distance, "{}", a.hand_gap);
            } else {
                assert!(a.hand_gap > cfg.touching_distance);
            }
            assert!(!interpenetrate(&m[0], &m[1]));
            assert_eq!(a.split, if id < 3 { Split::Train } else { Split::Test });
        }
    }

    #[test]
    fn image_foreground_is_the_silhouette() {
        let data = SceneData::generate(&small(), 1).unwrap();
        let caster = SceneCaster::new(data.meshes.to_vec());
        for (img, cam) in data.images.iter().zip(&data.spec.cameras) {
            let sil = silhouette_of(&caster, cam);
            assert_eq!(img.foreground(), sil);
            assert!(sil.count_ones() > 20);
        }
    }

    #[test]
    fn yaw_wraps() {
        let mut s = generate_scene(&small(), 0).unwrap();
        s.azimuths_deg = vec![350.0, 10.0, 180.0];
        assert_eq!(s.relative_yaw(0, 1), 20.0);
        assert_eq!(s.relative_yaw(1, 2), 170.0);
        assert_eq!(s.relative_yaw(2, 2), 0.0);
    }

    #[test]
    fn pattern_range() {
        for i in 0..1000 {
            let t = i as f64 / 999.0;
            let p = skin_pattern(Vec3::new(t, (t * 7.0).fract(), (t * 3.0).fract()));
            assert!((0.55..=1.0).contains(&p));
        }
    }
}
