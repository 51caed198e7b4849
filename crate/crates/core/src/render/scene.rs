use crate::error::{invalid, Result};
use crate::geometry::{scene_bounds, Aabb, Camera, HandLabel, TriMesh, Vec3, VertexTree};
use crate::networks::{positional_encode_into, NetConfig, PointBatch};
use crate::sdf::signed_distance;
use crate::visibility::{hand_masks, SceneCaster, VisibilityMap};

use super::BOX_INFLATION;

/// Both hand meshes with the acceleration structures the field queries need.
/// A hand can be removed, which drops it from the SDF, visibility and vertex
/// queries while keeping the other hand's vertex indexing intact.
pub struct Scene {
    pub meshes: [TriMesh; 2],
    pub active: [bool; 2],
    pub caster: SceneCaster,
    tree: Option<VertexTree>,
    /// Inflated scene box used for ray clipping and coordinate normalization.
    pub bounds: Aabb,
    /// Diagonal of the active meshes' box.
    pub diagonal: f64,
}

impl Scene {
    pub fn new(meshes: [TriMesh; 2]) -> Result<Scene> {
        Scene::with_active(meshes, [true, true])
    }

    pub fn without(meshes: [TriMesh; 2], hand: HandLabel) -> Result<Scene> {
        let mut active = [true, true];
        active[hand.mesh_id()] = false;
        Scene::with_active(meshes, active)
    }

    pub fn with_active(meshes: [TriMesh; 2], active: [bool; 2]) -> Result<Scene> {
        for (i, m) in meshes.iter().enumerate() {
            if m.hand_label.mesh_id() != i {
                return Err(invalid(format!("mesh slot {i} holds the {:?} hand", m.hand_label)));
            }
        }
        let used: Vec<TriMesh> = meshes.iter().zip(active).filter(|(_, a)| *a).map(|(m, _)| m.clone()).collect();
        let tree = used.iter().any(|m| !m.vertices.is_empty()).then(|| VertexTree::build(&used)).transpose()?;
        let raw = scene_bounds(&used);
        let diagonal = if raw.is_empty() { 0.0 } else { raw.diagonal() };
        let bounds = if raw.is_empty() { raw } else { raw.inflated(BOX_INFLATION) };
        Ok(Scene { caster: SceneCaster::new(used), meshes, active, tree, bounds, diagonal })
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_none()
    }

    /// Deviation bound for this scene.
    pub fn delta_max(&self, cfg: &NetConfig) -> f64 {
        cfg.delta_fraction * self.diagonal
    }

    /// Per-vertex visibility from `camera` for each hand; inactive hands are all false.
    pub fn vertex_visibility(&self, camera: &Camera) -> [Vec<bool>; 2] {
        let offset = self.caster.surface_offset();
        let vis = |i: usize| -> Vec<bool> {
            if !self.active[i] {
                return vec![false; self.meshes[i].vertex_count()];
            }
            self.meshes[i].vertices.iter().map(|&p| self.caster.point_visibility(p, camera, offset)).collect()
        };
        [vis(0), vis(1)]
    }

    fn normalized(&self, q: Vec3) -> [f64; 3] {
        let e = self.bounds.extent();
        let r = q - self.bounds.min;
        [r.x / e.x, r.y / e.y, r.z / e.z]
    }
}

/// An input image with its camera and everything derived from them once.
pub struct InputView {
    pub camera: Camera,
    /// Planar `[3, H, W]` colors in [0, 1].
    pub image: Vec<f64>,
    /// Silhouettes of the left and right hands in this view.
    pub masks: [VisibilityMap; 2],
    pub vertex_vis: [Vec<bool>; 2],
}

impl InputView {
    pub fn new(scene: &Scene, camera: Camera, image: Vec<f64>) -> Result<InputView> {
        if image.len() != 3 * camera.width * camera.height {
            return Err(invalid(format!(
                "input image has {} values, camera is {}x{}",
                image.len(),
                camera.width,
                camera.height
            )));
        }
        let masks = hand_masks(&scene.caster, &camera);
        let vertex_vis = scene.vertex_visibility(&camera);
        Ok(InputView { camera, image, masks, vertex_vis })
    }

    /// Feature-cell coordinates of the projection of `p`.
    fn feature_xy(&self, p: Vec3) -> (f64, f64) {
        match self.camera.project(p) {
            Ok((u, v, _)) => (u / 4.0 - 0.5, v / 4.0 - 0.5),
            Err(_) => (-1.0, -1.0),
        }
    }
}

/// Geometry-derived inputs of one query point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointData {
    pub sdf: f64,
    pub q_xy: (f64, f64),
    pub p_xy: (f64, f64),
    pub mirror_xy: (f64, f64),
    pub vis: [f64; 3],
    pub mirror_valid: bool,
    pub normalized: [f64; 3],
}

impl PointData {
    pub fn compute(scene: &Scene, view: &InputView, q: Vec3) -> PointData {
        let sdf = signed_distance(&scene.caster, q);
        let vq = scene.caster.point_visibility(q, &view.camera, 0.0);
        let nearest = scene.tree.as_ref().expect("query points need a non-empty scene").nearest(q);
        let (pm, pi) = (nearest.vertex.mesh.mesh_id(), nearest.vertex.index);
        let p = scene.meshes[pm].vertices[pi];
        let om = 1 - pm;
        let mirror_valid = scene.active[om] && pi < scene.meshes[om].vertex_count();
        let (mirror_xy, vm) = if mirror_valid {
            (view.feature_xy(scene.meshes[om].vertices[pi]), view.vertex_vis[om][pi])
        } else {
            ((-1.0, -1.0), false)
        };
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        PointData {
            sdf,
            q_xy: view.feature_xy(q),
            p_xy: view.feature_xy(p),
            mirror_xy,
            vis: [b(vq), b(view.vertex_vis[pm][pi]), b(vm)],
            mirror_valid,
            normalized: scene.normalized(q),
        }
    }

    /// Appends this point, seen along `dir`, to `batch`.
    pub fn push_into(&self, batch: &mut PointBatch, dir: Vec3, cfg: &NetConfig) {
        positional_encode_into(self.normalized, cfg.pe_levels, &mut batch.phi);
        positional_encode_into([dir.x, dir.y, dir.z], cfg.dir_levels, &mut batch.dir);
        batch.q_xy.push(self.q_xy);
        batch.p_xy.push(self.p_xy);
        batch.mirror_xy.push(self.mirror_xy);
        batch.vis.push(self.vis);
        batch.mirror_valid.push(self.mirror_valid);
    }
}
