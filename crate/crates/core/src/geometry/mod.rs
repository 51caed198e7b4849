//! Meshes, cameras, the articulated hand proxy, and vertex queries.

pub mod camera;
pub mod hand;
pub mod mesh;
pub mod nearest;
pub mod vec3;

pub use camera::{Camera, Ray};
pub use hand::{generate_hand_proxy, hand_topology, HandPose};
pub use mesh::{HandLabel, TriMesh};
pub use nearest::{mirrored_vertex, nearest_vertex_scan, NearestVertex, VertexRef, VertexTree};
pub use vec3::{Aabb, Mat3, Vec3};

/// Globally nearest vertex over both meshes, ties broken by `(mesh, index)`.
pub fn nearest_vertex(q: Vec3, meshes: &[TriMesh; 2]) -> crate::Result<NearestVertex> {
    if meshes.iter().any(|m| m.vertices.is_empty()) {
        return Err(crate::error::invalid("nearest_vertex needs two non-empty meshes"));
    }
    Ok(nearest_vertex_scan(q, meshes))
}

/// Bounds of both meshes together.
pub fn scene_bounds(meshes: &[TriMesh]) -> Aabb {
    meshes.iter().fold(Aabb::EMPTY, |b, m| b.union(m.bounds()))
}
