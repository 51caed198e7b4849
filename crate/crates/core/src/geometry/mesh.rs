use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vec3::{Aabb, Vec3};
use crate::error::{invalid, io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandLabel {
    Left,
    Right,
}

impl HandLabel {
    /// Slot of this hand in a `[TriMesh; 2]` pair.
    pub fn mesh_id(self) -> usize {
        match self {
            HandLabel::Left => 0,
            HandLabel::Right => 1,
        }
    }

    pub fn from_mesh_id(id: usize) -> HandLabel {
        if id == 0 {
            HandLabel::Left
        } else {
            HandLabel::Right
        }
    }

    pub fn other(self) -> HandLabel {
        match self {
            HandLabel::Left => HandLabel::Right,
            HandLabel::Right => HandLabel::Left,
        }
    }
}

impl std::str::FromStr for HandLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(HandLabel::Left),
            "right" => Ok(HandLabel::Right),
            other => Err(invalid(format!("unknown hand label {other:?}"))),
        }
    }
}

/// Indexed triangle mesh with per-vertex canonical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub canonical_coords: Vec<Vec3>,
    pub hand_label: HandLabel,
    /// Connected-component id of every face. Each component is a closed surface.
    face_component: Vec<u32>,
    component_count: usize,
}

pub const MIN_FACE_AREA: f64 = 1e-12;

impl TriMesh {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        canonical_coords: Vec<Vec3>,
        hand_label: HandLabel,
    ) -> Result<Self> {
        if canonical_coords.len() != vertices.len() {
            return Err(invalid(format!(
                "{} canonical coordinates for {} vertices",
                canonical_coords.len(),
                vertices.len()
            )));
        }
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(invalid(format!("face {fi} {f:?} indexes past {n} vertices")));
            }
            let area = triangle_area(vertices[f[0] as usize], vertices[f[1] as usize], vertices[f[2] as usize]);
            if !(area > MIN_FACE_AREA) {
                return Err(invalid(format!("face {fi} is degenerate (area {area:e})")));
            }
        }
        let (face_component, component_count) = label_components(n, &faces);
        Ok(TriMesh { vertices, faces, canonical_coords, hand_label, face_component, component_count })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0] as usize], self.vertices[f[1] as usize], self.vertices[f[2] as usize]]
    }

    pub fn face_component(&self, face: usize) -> usize {
        self.face_component[face] as usize
    }

    pub fn component_count(&self) -> usize {
        self.component_count
    }

    /// Every undirected edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        let mut count: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !count.is_empty() && count.values().all(|&c| c == 2)
    }

    /// Same mesh with positions replaced; topology and canonical coordinates kept.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        TriMesh::new(vertices, self.faces.clone(), self.canonical_coords.clone(), self.hand_label)
    }

    /// Axis-aligned cube centred at `center`, each face split into `n × n` quads.
    pub fn cube(center: Vec3, side: f64, n: usize, label: HandLabel) -> Self {
        let (verts, faces) = box_lattice(n, n, n);
        let vertices: Vec<Vec3> =
            verts.iter().map(|u| center + (*u - Vec3::splat(0.5)) * side).collect();
        TriMesh::new(vertices, faces, verts, label).expect("cube is valid")
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            // `{:?}` prints the shortest representation that parses back to the same f64
            writeln!(s, "v {:?} {:?} {:?}", v.x, v.y, v.z).unwrap();
        }
        for f in &self.faces {
            writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(io_err(path))
    }

    /// Parses positions and faces; canonical coordinates must be supplied by the caller
    /// since OBJ carries none.
    pub fn parse_obj(
        text: &str,
        canonical_coords: Vec<Vec3>,
        hand_label: HandLabel,
        path: &Path,
    ) -> Result<Self> {
        let perr = |line: usize, reason: &str| Error::Parse {
            path: path.to_path_buf(),
            reason: format!("line {}: {reason}", line + 1),
        };
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .map(|t| t.parse::<f64>().map_err(|_| perr(ln, "bad coordinate")))
                        .collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(perr(ln, "vertex needs 3 coordinates"));
                    }
                    vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or("");
                            head.parse::<u32>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| perr(ln, "bad face index"))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(perr(ln, "only triangles are supported"));
                    }
                    faces.push([idx[0], idx[1], idx[2]]);
                }
                Some(t) if t.starts_with('#') => {}
                None => {}
                Some(_) => {}
            }
        }
        TriMesh::new(vertices, faces, canonical_coords, hand_label)
    }

    pub fn read_obj(path: &Path, canonical_coords: Vec<Vec3>, hand_label: HandLabel) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        TriMesh::parse_obj(&text, canonical_coords, hand_label, path)
    }
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * (b - a).cross(c - a).norm()
}

fn label_components(n: usize, faces: &[[u32; 3]]) -> (Vec<u32>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for f in faces {
        for k in 1..3 {
            let a = find(&mut parent, f[0] as usize);
            let b = find(&mut parent, f[k] as usize);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let labels = faces
        .iter()
        .map(|f| {
            let root = find(&mut parent, f[0] as usize);
            let next = ids.len() as u32;
            *ids.entry(root).or_insert(next)
        })
        .collect();
    (labels, ids.len())
}

/// Surface lattice of the unit box `[0,1]^3` with `nx × ny × nz` cells, split into
/// triangles with outward winding. Vertices are returned in `[0,1]^3`.
pub fn box_lattice(nx: usize, ny: usize, nz: usize) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let dims = [nx, ny, nz];
    let mut index: HashMap<[usize; 3], u32> = HashMap::new();
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |c: [usize; 3], verts: &mut Vec<Vec3>| -> u32 {
        *index.entry(c).or_insert_with(|| {
            verts.push(Vec3::new(c[0] as f64 / nx as f64, c[1] as f64 / ny as f64, c[2] as f64 / nz as f64));
            (verts.len() - 1) as u32
        })
    };
    for axis in 0..3 {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let fixed = side * dims[axis];
            for i in 0..dims[a1] {
                for j in 0..dims[a2] {
                    let corner = |di: usize, dj: usize| {
                        let mut c = [0usize; 3];
                        c[axis] = fixed;
                        c[a1] = i + di;
                        c[a2] = j + dj;
                        c
                    };
                    let q = [
                        vid(corner(0, 0), &mut verts),
                        vid(corner(1, 0), &mut verts),
                        vid(corner(1, 1), &mut verts),
                        vid(corner(0, 1), &mut verts),
                    ];
                    // (a1, a2, axis) is right-handed, so q winds counter-clockwise
                    // around +axis; flip on the low side.
                    let tris = if side == 1 {
                        [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
                    } else {
                        [[q[0], q[2], q[1]], [q[0], q[3], q[2]]]
                    };
                    faces.extend_from_slice(&tris);
                }
            }
        }
    }
    (verts, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_is_watertight_and_outward() {
        let m = TriMesh::cube(Vec3::ZERO, 1.0, 3, HandLabel::Right);
        assert!(m.is_watertight());
        assert_eq!(m.component_count(), 1);
        assert_eq!(m.vertex_count(), 6 * 9 + 2);
        for f in 0..m.face_count() {
            let [a, b, c] = m.triangle(f);
            let n = (b - a).cross(c - a);
            let centroid = (a + b + c) * (1.0 / 3.0);
            assert!(n.dot(centroid) > 0.0, "face {f} winds inward");
        }
    }

    #[test]
    fn rejects_bad_index_and_degenerate_face() {
        let v = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let c = v.clone();
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]], c.clone(), HandLabel::Left).is_err());
        let flat = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)];
        assert!(TriMesh::new(flat, vec![[0, 1, 2]], c.clone(), HandLabel::Left).is_err());
        assert!(TriMesh::new(v, vec![[0, 1, 2]], c, HandLabel::Left).is_ok());
    }

    #[test]
    fn obj_roundtrip_is_exact() {
        let m = TriMesh::cube(Vec3::new(0.1, -0.3, 1.0 / 3.0), 0.7, 2, HandLabel::Left);
        let text = m.to_obj();
        let back = TriMesh::parse_obj(&text, m.canonical_coords.clone(), HandLabel::Left, Path::new("x.obj")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn obj_rejects_quads() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let c = vec![Vec3::ZERO; 4];
        assert!(TriMesh::parse_obj(text, c, HandLabel::Left, Path::new("q.obj")).is_err());
    }
}
