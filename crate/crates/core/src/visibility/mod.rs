//! Ray casting against the hand meshes: point visibility and ground-truth
//! visibility maps for the discriminator.
//!
//! Ground truth follows two rules. A real target image counts every foreground
//! pixel as visible. A synthesized target marks a foreground pixel visible when its
//! surface point can be seen from the *input* camera.

pub mod bvh;
pub mod map;

pub use bvh::{Bvh, Hit, Triangle, TriangleId, EPSILON_HIT};
pub use map::{parse_netpbm, VisibilityMap};

use crate::geometry::{scene_bounds, Camera, HandLabel, Ray, TriMesh, Vec3};

/// On-surface points are pushed this fraction of the scene diagonal toward the
/// camera before the occlusion test.
pub const SURFACE_OFFSET_FRACTION: f64 = 1e-4;

/// Meshes plus their BVH; `bvh` is `None` for an empty scene.
#[derive(Clone, Debug)]
pub struct SceneCaster {
    pub meshes: Vec<TriMesh>,
    pub bvh: Option<Bvh>,
    pub diagonal: f64,
}

impl SceneCaster {
    pub fn new(meshes: Vec<TriMesh>) -> Self {
        let nonempty = meshes.iter().any(|m| !m.is_empty());
        let bvh = nonempty.then(|| Bvh::build(&meshes).expect("non-empty scene"));
        let diagonal = if nonempty { scene_bounds(&meshes).diagonal() } else { 0.0 };
        SceneCaster { meshes, bvh, diagonal }
    }

    pub fn surface_offset(&self) -> f64 {
        SURFACE_OFFSET_FRACTION * self.diagonal
    }

    pub fn intersect_first(&self, ray: &Ray) -> Option<Hit> {
        self.bvh.as_ref()?.intersect_first(ray)
    }

    /// World position of a hit.
    pub fn hit_point(&self, hit: &Hit) -> Vec3 {
        let m = &self.meshes[hit.triangle.slot];
        let [a, b, c] = m.triangle(hit.triangle.face);
        let w = hit.barycentrics;
        a * w[0] + b * w[1] + c * w[2]
    }

    /// Barycentric interpolation of canonical coordinates at a hit.
    pub fn hit_canonical(&self, hit: &Hit) -> Vec3 {
        let m = &self.meshes[hit.triangle.slot];
        let f = m.faces[hit.triangle.face];
        let w = hit.barycentrics;
        let c = |k: usize| m.canonical_coords[f[k] as usize];
        c(0) * w[0] + c(1) * w[1] + c(2) * w[2]
    }

    pub fn hit_hand(&self, hit: &Hit) -> HandLabel {
        self.meshes[hit.triangle.slot].hand_label
    }

    pub fn point_visibility(&self, p: Vec3, camera: &Camera, offset: f64) -> bool {
        match &self.bvh {
            Some(bvh) => point_visibility(bvh, p, camera, offset),
            None => camera.project(p).is_ok(),
        }
    }

    /// First hit of every pixel-center ray, row-major.
    pub fn first_hits(&self, camera: &Camera) -> Vec<Option<Hit>> {
        let mut out = Vec::with_capacity(camera.width * camera.height);
        for row in 0..camera.height {
            for col in 0..camera.width {
                out.push(self.intersect_first(&camera.pixel_ray(col, row)));
            }
        }
        out
    }
}

/// `true` iff nothing blocks the segment from `p` (moved `offset` toward the camera)
/// to the camera center. Points that cannot be projected are invisible.
pub fn point_visibility(bvh: &Bvh, p: Vec3, camera: &Camera, offset: f64) -> bool {
    if camera.project(p).is_err() {
        return false;
    }
    let to_cam = camera.center() - p;
    let dir = to_cam.normalized();
    let origin = p + dir * offset;
    let t_max = (camera.center() - origin).norm();
    !bvh.occluded(&Ray::new(origin, dir), t_max)
}

/// Binary foreground mask: 1 where the pixel-center ray hits any triangle.
pub fn rasterize_silhouette(meshes: &[TriMesh], camera: &Camera) -> VisibilityMap {
    silhouette_of(&SceneCaster::new(meshes.to_vec()), camera)
}

pub fn silhouette_of(caster: &SceneCaster, camera: &Camera) -> VisibilityMap {
    let hits = caster.first_hits(camera);
    VisibilityMap {
        width: camera.width,
        height: camera.height,
        data: hits.iter().map(|h| if h.is_some() { 1.0 } else { 0.0 }).collect(),
    }
}

/// Per-hand masks `[left, right]` by the hand owning the first hit.
pub fn hand_masks(caster: &SceneCaster, camera: &Camera) -> [VisibilityMap; 2] {
    let hits = caster.first_hits(camera);
    let mask = |hand: HandLabel| VisibilityMap {
        width: camera.width,
        height: camera.height,
        data: hits
            .iter()
            .map(|h| match h {
                Some(h) if caster.hit_hand(h) == hand => 1.0,
                _ => 0.0,
            })
            .collect(),
    };
    [mask(HandLabel::Left), mask(HandLabel::Right)]
}

/// Planar `[6, H, W]` map of interpolated canonical coordinates: channels 0..3
/// where the left hand is hit first, 3..6 for the right hand, zero elsewhere.
pub fn correspondence_map(caster: &SceneCaster, camera: &Camera) -> Vec<f64> {
    let n = camera.width * camera.height;
    let mut out = vec![0.0; 6 * n];
    for (i, h) in caster.first_hits(camera).iter().enumerate() {
        if let Some(h) = h {
            let c = caster.hit_canonical(h);
            let base = 3 * caster.hit_hand(h).mesh_id();
            for k in 0..3 {
                out[(base + k) * n + i] = c[k];
            }
        }
    }
    out
}

/// Target-view map of surface visibility from the input camera, evaluated at each
/// pixel's hit point. Background pixels are 0.
pub fn render_visibility_gt(meshes: &[TriMesh], input_camera: &Camera, target_camera: &Camera) -> VisibilityMap {
    visibility_gt_of(&SceneCaster::new(meshes.to_vec()), input_camera, target_camera)
}

pub fn visibility_gt_of(caster: &SceneCaster, input_camera: &Camera, target_camera: &Camera) -> VisibilityMap {
    let offset = caster.surface_offset();
    let hits = caster.first_hits(target_camera);
    VisibilityMap {
        width: target_camera.width,
        height: target_camera.height,
        data: hits
            .iter()
            .map(|h| match h {
                Some(h) if caster.point_visibility(caster.hit_point(h), input_camera, offset) => 1.0,
                _ => 0.0,
            })
            .collect(),
    }
}

/// Ground truth for the discriminator's visibility head.
pub fn make_gt_visibility(
    target_is_real: bool,
    meshes: &[TriMesh],
    input_camera: &Camera,
    target_camera: &Camera,
) -> VisibilityMap {
    let caster = SceneCaster::new(meshes.to_vec());
    gt_visibility_of(target_is_real, &caster, input_camera, target_camera)
}

pub fn gt_visibility_of(
    target_is_real: bool,
    caster: &SceneCaster,
    input_camera: &Camera,
    target_camera: &Camera,
) -> VisibilityMap {
    if target_is_real {
        silhouette_of(caster, target_camera)
    } else {
        visibility_gt_of(caster, input_camera, target_camera)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Mat3, Vec3};

    fn front_cam(width: usize) -> Camera {
        Camera::look_at(Vec3::new(0.0, -4.0, 0.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 0.6, width, width)
    }

    fn cube() -> TriMesh {
        TriMesh::cube(Vec3::ZERO, 1.0, 4, HandLabel::Left)
    }

    #[test]
    fn convex_front_and_back_vertices() {
        let m = cube();
        let caster = SceneCaster::new(vec![m.clone()]);
        let cam = front_cam(16);
        let c = cam.center();
        let (near, far) = m.vertices.iter().fold((m.vertices[0], m.vertices[0]), |(n, f), v| {
            (
                if (*v - c).norm() < (n - c).norm() { *v } else { n },
                if (*v - c).norm() > (f - c).norm() { *v } else { f },
            )
        });
        let off = caster.surface_offset();
        assert!(caster.point_visibility(near, &cam, off));
        assert!(!caster.point_visibility(far, &cam, off));
    }

    #[test]
    fn empty_scene_mask_is_zero() {
        let m = rasterize_silhouette(&[], &front_cam(8));
        assert_eq!(m.count_ones(), 0);
        assert_eq!(m.data.len(), 64);
    }

    #[test]
    fn filled_frustum_mask_is_one() {
        let big = TriMesh::cube(Vec3::ZERO, 3.0, 2, HandLabel::Right);
        let cam = Camera::look_at(Vec3::new(0.0, -2.5, 0.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 0.5, 8, 8);
        assert_eq!(rasterize_silhouette(&[big], &cam).count_ones(), 64);
    }

    #[test]
    fn same_camera_gt_equals_silhouette() {
        let cam = front_cam(24);
        let m = [cube()];
        let sil = rasterize_silhouette(&m, &cam);
        assert!(sil.count_ones() > 0);
        assert_eq!(render_visibility_gt(&m, &cam, &cam), sil);
        assert_eq!(make_gt_visibility(true, &m, &cam, &cam), sil);
    }

    #[test]
    fn back_view_of_convex_proxy_is_invisible() {
        let front = front_cam(24);
        let back = Camera::look_at(Vec3::new(0.0, 4.0, 0.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), 0.6, 24, 24);
        let m = [cube()];
        let gt = render_visibility_gt(&m, &front, &back);
        assert!(gt.is_binary());
        assert_eq!(gt.count_ones(), 0);
        assert!(rasterize_silhouette(&m, &back).count_ones() > 0);
    }

    #[test]
    fn non_projectable_point_is_invisible() {
        let caster = SceneCaster::new(vec![cube()]);
        let cam = Camera { rotation: Mat3::IDENTITY, translation: Vec3::new(0.0, 0.0, 5.0), ..front_cam(8) };
        // camera center is (0,0,-5) looking +z; this point is behind it
        assert!(!caster.point_visibility(Vec3::new(0.0, 0.0, -9.0), &cam, 0.0));
    }
}
