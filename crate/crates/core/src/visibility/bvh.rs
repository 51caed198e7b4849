//! Bounding volume hierarchy over the triangles of a scene.

use std::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::geometry::{Aabb, HandLabel, Ray, TriMesh, Vec3};

/// Hits closer than this along a ray are ignored (scene units).
pub const EPSILON_HIT: f64 = 1e-5;
pub const MAX_LEAF: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriangleId {
    /// Position of the owning mesh in the slice the BVH was built from.
    pub slot: usize,
    pub face: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: TriangleId,
    /// Weights of the three triangle vertices; they sum to one.
    pub barycentrics: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct Triangle {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
    pub id: TriangleId,
    pub hand: HandLabel,
    pub component: usize,
}

impl Triangle {
    pub fn bounds(&self) -> Aabb {
        Aabb::EMPTY.grow(self.a).grow(self.b).grow(self.c)
    }

    pub fn centroid(&self) -> Vec3 {
        (self.a + self.b + self.c) * (1.0 / 3.0)
    }

    /// Möller–Trumbore, two-sided. Returns `(t, u, v)` for any `t` (no range check).
    #[inline]
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64, f64)> {
        let e1 = self.b - self.a;
        let e2 = self.c - self.a;
        let p = ray.direction.cross(e2);
        let det = e1.dot(p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = ray.origin - self.a;
        let u = s.dot(p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(e1);
        let v = ray.direction.dot(q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        Some((e2.dot(q) * inv, u, v))
    }

    #[inline]
    pub fn hit(&self, ray: &Ray) -> Option<Hit> {
        let (t, u, v) = self.intersect(ray)?;
        (t > EPSILON_HIT).then(|| Hit { t, triangle: self.id, barycentrics: [1.0 - u - v, u, v] })
    }
}

fn slack(t: f64) -> f64 {
    1e-9 * (1.0 + t.abs())
}

/// Strict ordering of hits: nearer first, then lower triangle id.
fn closer(a: &Hit, b: &Hit) -> bool {
    match a.t.partial_cmp(&b.t).unwrap_or(Ordering::Greater) {
        Ordering::Less => true,
        Ordering::Equal => a.triangle < b.triangle,
        Ordering::Greater => false,
    }
}

#[derive(Clone, Debug)]
pub enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl BvhNode {
    pub fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Immutable after construction; node 0 is the root.
#[derive(Clone, Debug)]
pub struct Bvh {
    triangles: Vec<Triangle>,
    nodes: Vec<BvhNode>,
}

pub fn scene_triangles(meshes: &[TriMesh]) -> Vec<Triangle> {
    let mut tris = Vec::new();
    for (slot, m) in meshes.iter().enumerate() {
        for face in 0..m.face_count() {
            let [a, b, c] = m.triangle(face);
            tris.push(Triangle {
                a,
                b,
                c,
                id: TriangleId { slot, face },
                hand: m.hand_label,
                component: m.face_component(face),
            });
        }
    }
    tris
}

impl Bvh {
    pub fn build(meshes: &[TriMesh]) -> Result<Self> {
        Bvh::from_triangles(scene_triangles(meshes))
    }

    pub fn from_triangles(mut triangles: Vec<Triangle>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(invalid("cannot build a BVH over an empty scene"));
        }
        let mut nodes = Vec::new();
        let n = triangles.len();
        build(&mut triangles, 0, n, &mut nodes);
        Ok(Bvh { triangles, nodes })
    }

    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    /// Triangles in leaf order.
    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn bounds(&self) -> Aabb {
        *self.nodes[0].bounds()
    }

    fn traverse(&self, ray: &Ray, t_max: f64, mut leaf: impl FnMut(&Triangle) -> Option<f64>) {
        let inv = ray.inv_direction();
        let mut t_max = t_max;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            match node.bounds().ray_interval(ray.origin, inv) {
                // slack keeps boxes whose interval rounding lands just past a hit
                Some((t0, t1)) if t1 >= EPSILON_HIT - slack(t1) && t0 <= t_max + slack(t_max) => {}
                _ => continue,
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for tri in &self.triangles[start..end] {
                        if let Some(limit) = leaf(tri) {
                            t_max = t_max.min(limit);
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }

    /// Nearest hit with `t > EPSILON_HIT`.
    pub fn intersect_first(&self, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        self.traverse(ray, f64::INFINITY, |tri| {
            let h = tri.hit(ray)?;
            if best.as_ref().map_or(true, |b| closer(&h, b)) {
                best = Some(h);
            }
            Some(h.t)
        });
        best
    }

    /// Whether any triangle is hit with `EPSILON_HIT < t < t_max`.
    pub fn occluded(&self, ray: &Ray, t_max: f64) -> bool {
        let mut hit = false;
        self.traverse(ray, t_max, |tri| {
            if hit {
                return Some(f64::NEG_INFINITY);
            }
            let h = tri.hit(ray)?;
            if h.t < t_max {
                hit = true;
                return Some(f64::NEG_INFINITY);
            }
            None
        });
        hit
    }

    /// Calls `f` for every hit with `t > EPSILON_HIT`, in no particular order.
    pub fn for_each_hit(&self, ray: &Ray, mut f: impl FnMut(&Triangle, &Hit)) {
        self.traverse(ray, f64::INFINITY, |tri| {
            if let Some(h) = tri.hit(ray) {
                f(tri, &h);
            }
            None
        });
    }

    /// Smallest squared distance from `p` to any triangle, with the triangle.
    pub fn closest_triangle(&self, p: Vec3) -> (f64, TriangleId) {
        let mut best = (f64::INFINITY, TriangleId { slot: usize::MAX, face: usize::MAX });
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((id, lower)) = stack.pop() {
            if lower > best.0 * (1.0 + 1e-12) {
                continue;
            }
            match self.nodes[id] {
                BvhNode::Leaf { start, end, .. } => {
                    for tri in &self.triangles[start..end] {
                        let d2 = crate::sdf::point_triangle_distance_squared(p, tri.a, tri.b, tri.c);
                        if d2 < best.0 || (d2 == best.0 && tri.id < best.1) {
                            best = (d2, tri.id);
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(p);
                    let dr = self.nodes[right].bounds().distance_squared(p);
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
        best
    }
}

fn build(tris: &mut [Triangle], start: usize, end: usize, nodes: &mut Vec<BvhNode>) -> usize {
    let bounds = tris[start..end].iter().fold(Aabb::EMPTY, |b, t| b.union(t.bounds()));
    let id = nodes.len();
    if end - start <= MAX_LEAF {
        nodes.push(BvhNode::Leaf { bounds, start, end });
        return id;
    }
    let axis = bounds.longest_axis();
    tris[start..end].sort_by(|a, b| a.centroid()[axis].total_cmp(&b.centroid()[axis]).then(a.id.cmp(&b.id)));
    let mid = start + (end - start) / 2;
    nodes.push(BvhNode::Leaf { bounds, start, end });
    let left = build(tris, start, mid, nodes);
    let right = build(tris, mid, end, nodes);
    nodes[id] = BvhNode::Inner { bounds, left, right };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HandLabel;

    fn tri_mesh(pts: [Vec3; 3]) -> TriMesh {
        TriMesh::new(pts.to_vec(), vec![[0, 1, 2]], pts.to_vec(), HandLabel::Left).unwrap()
    }

    #[test]
    fn single_triangle_root_is_leaf() {
        let m = tri_mesh([Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]);
        let bvh = Bvh::build(std::slice::from_ref(&m)).unwrap();
        assert_eq!(bvh.nodes().len(), 1);
        assert!(matches!(bvh.nodes()[0], BvhNode::Leaf { start: 0, end: 1, .. }));
    }

    #[test]
    fn axis_aligned_hit_and_reverse_miss() {
        let m = tri_mesh([Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]);
        let bvh = Bvh::build(std::slice::from_ref(&m)).unwrap();
        let ray = Ray::new(Vec3::new(0.25, 0.25, 1.0), Vec3::new(0.0, 0.0, -1.0));
        let h = bvh.intersect_first(&ray).unwrap();
        assert_eq!(h.t, 1.0);
        assert!((h.barycentrics.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let back = Ray::new(ray.origin, Vec3::new(0.0, 0.0, 1.0));
        assert!(bvh.intersect_first(&back).is_none());
    }

    #[test]
    fn disjoint_triangles_union_box() {
        let a = tri_mesh([Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]);
        let far = Vec3::new(100.0, -50.0, 20.0);
        let b = tri_mesh([far, far + Vec3::new(0.0, 0.0, 1.0), far + Vec3::new(0.0, 1.0, 0.0)]);
        let bvh = Bvh::build(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(bvh.bounds(), a.bounds().union(b.bounds()));
    }

    #[test]
    fn empty_scene_is_rejected() {
        assert!(Bvh::build(&[]).is_err());
    }

    #[test]
    fn every_triangle_in_one_leaf_and_boxes_nest() {
        let m = TriMesh::cube(Vec3::ZERO, 1.0, 6, HandLabel::Right);
        let bvh = Bvh::build(std::slice::from_ref(&m)).unwrap();
        let mut seen = vec![0u32; m.face_count()];
        for node in bvh.nodes() {
            match *node {
                BvhNode::Leaf { start, end, ref bounds } => {
                    assert!(end - start <= MAX_LEAF);
                    for t in &bvh.triangles()[start..end] {
                        seen[t.id.face] += 1;
                        assert!(bounds.contains_box(&t.bounds()));
                    }
                }
                BvhNode::Inner { left, right, ref bounds } => {
                    assert!(bounds.contains_box(bvh.nodes()[left].bounds()));
                    assert!(bounds.contains_box(bvh.nodes()[right].bounds()));
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }
}
