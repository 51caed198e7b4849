//! Nearest-vertex queries over the union of both hands, and the mirrored-vertex map.

use std::cmp::Ordering;

use super::mesh::{HandLabel, TriMesh};
use super::vec3::Vec3;
use crate::error::{invalid, Result};

/// A vertex of one of the two meshes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexRef {
    pub mesh: HandLabel,
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearestVertex {
    pub vertex: VertexRef,
    pub distance: f64,
}

/// Lexicographic key `(d², mesh, index)` that defines the global nearest vertex.
fn better(d2: f64, v: VertexRef, best_d2: f64, best: VertexRef) -> bool {
    match d2.partial_cmp(&best_d2).unwrap_or(Ordering::Greater) {
        Ordering::Less => true,
        Ordering::Equal => v < best,
        Ordering::Greater => false,
    }
}

/// Exhaustive scan; the reference for [`VertexTree`].
pub fn nearest_vertex_scan(q: Vec3, meshes: &[TriMesh; 2]) -> NearestVertex {
    let mut best_d2 = f64::INFINITY;
    let mut best = VertexRef { mesh: HandLabel::Right, index: usize::MAX };
    for m in meshes {
        for (i, p) in m.vertices.iter().enumerate() {
            let d2 = (*p - q).norm_squared();
            let v = VertexRef { mesh: m.hand_label, index: i };
            if better(d2, v, best_d2, best) {
                best_d2 = d2;
                best = v;
            }
        }
    }
    NearestVertex { vertex: best, distance: best_d2.sqrt() }
}

const LEAF: usize = 8;

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// k-d tree over the vertices of both meshes. Results are identical to
/// [`nearest_vertex_scan`], including tie-breaks.
pub struct VertexTree {
    points: Vec<(Vec3, VertexRef)>,
    nodes: Vec<KdNode>,
}

impl VertexTree {
    /// Tree over every vertex of `meshes`; at least one vertex is required.
    pub fn build(meshes: &[TriMesh]) -> Result<Self> {
        if meshes.iter().all(|m| m.vertices.is_empty()) {
            return Err(invalid("nearest-vertex queries need a non-empty mesh"));
        }
        let mut points: Vec<(Vec3, VertexRef)> = meshes
            .iter()
            .flat_map(|m| {
                m.vertices
                    .iter()
                    .enumerate()
                    .map(move |(i, p)| (*p, VertexRef { mesh: m.hand_label, index: i }))
            })
            .collect();
        let mut nodes = Vec::new();
        let n = points.len();
        build_node(&mut points, 0, n, &mut nodes);
        Ok(VertexTree { points, nodes })
    }

    pub fn nearest(&self, q: Vec3) -> NearestVertex {
        let mut best_d2 = f64::INFINITY;
        let mut best = VertexRef { mesh: HandLabel::Right, index: usize::MAX };
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((node, plane_d2)) = stack.pop() {
            // `>` rather than `>=` keeps equidistant candidates reachable for the tie-break
            if plane_d2 > best_d2 {
                continue;
            }
            match self.nodes[node] {
                KdNode::Leaf { start, end } => {
                    for &(p, v) in &self.points[start..end] {
                        let d2 = (p - q).norm_squared();
                        if better(d2, v, best_d2, best) {
                            best_d2 = d2;
                            best = v;
                        }
                    }
                }
                KdNode::Split { axis, value, left, right } => {
                    let diff = q[axis] - value;
                    let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                    stack.push((far, diff * diff));
                    stack.push((near, 0.0));
                }
            }
        }
        NearestVertex { vertex: best, distance: best_d2.sqrt() }
    }
}

fn build_node(points: &mut [(Vec3, VertexRef)], start: usize, end: usize, nodes: &mut Vec<KdNode>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF {
        nodes.push(KdNode::Leaf { start, end });
        return id;
    }
    let slice = &mut points[start..end];
    let bounds = super::vec3::Aabb::from_points(slice.iter().map(|(p, _)| p));
    let axis = bounds.longest_axis();
    slice.sort_by(|a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
    let mid = slice.len() / 2;
    let value = slice[mid].0[axis];
    nodes.push(KdNode::Leaf { start: 0, end: 0 });
    // points left of `mid` have coordinate <= value and points right >= value,
    // so the plane distance is a valid lower bound on both sides
    let left = build_node(points, start, start + mid, nodes);
    let right = build_node(points, start + mid, end, nodes);
    nodes[id] = KdNode::Split { axis, value, left, right };
    id
}

/// Vertex with the same index on the other hand.
pub fn mirrored_vertex(v: VertexRef, vertex_count: usize) -> Result<VertexRef> {
    if v.index >= vertex_count {
        return Err(invalid(format!("vertex index {} out of range 0..{vertex_count}", v.index)));
    }
    Ok(VertexRef { mesh: v.mesh.other(), index: v.index })
}
