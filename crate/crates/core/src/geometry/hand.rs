//! Articulated low-poly hand proxy: a palm slab plus five two-segment digits, each a
//! closed subdivided box. Both hands share one topology; the left hand is the
//! x-mirror of the right hand.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{box_lattice, HandLabel, TriMesh};
use super::vec3::{Aabb, Mat3, Vec3};
use crate::error::{invalid, Result};

pub const DIGITS: usize = 5;
pub const JOINTS: usize = 2 * DIGITS;
/// Flexion limits (radians) shared by every joint.
pub const JOINT_LIMITS: (f64, f64) = (-0.2, 1.5);

const GAP: f64 = 0.02;
const DIGIT_HALF_WIDTH: f64 = 0.07;
const PALM_HALF: Vec3 = Vec3::new(0.4, 0.1, 0.4);
const PALM_CELLS: [usize; 3] = [8, 2, 8];
const SEGMENT_CELLS: [usize; 3] = [2, 2, 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandPose {
    /// Flexion per joint, digit-major: `[d0 base, d0 tip, d1 base, ...]`. Digit 4 is the thumb.
    pub joint_angles: [f64; JOINTS],
    /// Euler angles `(x, y, z)` of the global rotation `Rz·Ry·Rx`.
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Default for HandPose {
    fn default() -> Self {
        HandPose { joint_angles: [0.0; JOINTS], rotation: [0.0; 3], translation: [0.0; 3] }
    }
}

impl HandPose {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = JOINT_LIMITS;
        for (j, &a) in self.joint_angles.iter().enumerate() {
            if !(a >= lo && a <= hi) {
                return Err(invalid(format!("joint {j} angle {a} outside [{lo}, {hi}]")));
            }
        }
        if !self.rotation.iter().chain(&self.translation).all(|v| v.is_finite()) {
            return Err(invalid("non-finite global transform"));
        }
        Ok(())
    }

    /// Uniform joint angles within `[lo, hi] ∩ JOINT_LIMITS`; identity global transform.
    pub fn random_articulation<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> HandPose {
        let lo = lo.max(JOINT_LIMITS.0);
        let hi = hi.min(JOINT_LIMITS.1);
        let mut pose = HandPose::default();
        for a in pose.joint_angles.iter_mut() {
            *a = rng.gen_range(lo..=hi);
        }
        pose
    }
}

#[derive(Clone, Copy, Debug)]
struct Digit {
    base: Vec3,
    along: Vec3,
    up: Vec3,
    lateral: Vec3,
    lengths: [f64; 2],
}

fn digits() -> [Digit; DIGITS] {
    let finger = |x: f64, scale: f64| Digit {
        base: Vec3::new(x, 0.0, PALM_HALF.z + GAP),
        along: Vec3::new(0.0, 0.0, 1.0),
        up: Vec3::new(0.0, 1.0, 0.0),
        lateral: Vec3::new(1.0, 0.0, 0.0),
        lengths: [0.28 * scale, 0.24 * scale],
    };
    [
        finger(-0.3, 0.8),
        finger(-0.1, 1.0),
        finger(0.1, 1.05),
        finger(0.3, 0.95),
        Digit {
            base: Vec3::new(PALM_HALF.x + GAP, 0.0, -0.1),
            along: Vec3::new(1.0, 0.0, 0.0),
            up: Vec3::new(0.0, 1.0, 0.0),
            lateral: Vec3::new(0.0, 0.0, -1.0),
            lengths: [0.22, 0.2],
        },
    ]
}

/// Vertex range and lattice coordinates of one closed box component.
struct Component {
    start: usize,
    lattice: Vec<Vec3>,
}

/// Shared face list and canonical coordinates of the hand proxy.
pub struct HandTopology {
    pub faces: Vec<[u32; 3]>,
    pub canonical_coords: Vec<Vec3>,
    components: Vec<Component>,
}

impl HandTopology {
    pub fn vertex_count(&self) -> usize {
        self.canonical_coords.len()
    }
}

pub fn hand_topology() -> &'static HandTopology {
    static TOPOLOGY: OnceLock<HandTopology> = OnceLock::new();
    TOPOLOGY.get_or_init(|| {
        let mut faces = Vec::new();
        let mut components = Vec::new();
        let mut start = 0usize;
        let mut push = |cells: [usize; 3]| {
            let (lattice, f) = box_lattice(cells[0], cells[1], cells[2]);
            faces.extend(f.iter().map(|t| t.map(|i| i + start as u32)));
            let n = lattice.len();
            components.push(Component { start, lattice });
            start += n;
        };
        push(PALM_CELLS);
        for _ in 0..JOINTS {
            push(SEGMENT_CELLS);
        }
        let rest = articulate(&components, &HandPose::default());
        let b = Aabb::from_points(&rest);
        let e = b.extent();
        let canonical_coords = rest
            .iter()
            .map(|p| {
                let d = *p - b.min;
                Vec3::new(d.x / e.x, d.y / e.y, d.z / e.z)
            })
            .collect();
        HandTopology { faces, canonical_coords, components }
    })
}

/// Right-hand vertex positions for `pose`, before the global transform.
fn articulate(components: &[Component], pose: &HandPose) -> Vec<Vec3> {
    let total: usize = components.iter().map(|c| c.lattice.len()).sum();
    let mut out = vec![Vec3::ZERO; total];
    let palm = &components[0];
    for (k, u) in palm.lattice.iter().enumerate() {
        out[palm.start + k] = (*u * 2.0 - Vec3::splat(1.0)).mul_elem(PALM_HALF);
    }
    let hw = DIGIT_HALF_WIDTH;
    for (d, digit) in digits().iter().enumerate() {
        let mut joint = digit.base;
        let mut phi = 0.0;
        for s in 0..2 {
            phi += pose.joint_angles[2 * d + s];
            let (sn, cs) = phi.sin_cos();
            let along = digit.along * cs - digit.up * sn;
            let up = digit.along * sn + digit.up * cs;
            let len = digit.lengths[s];
            let comp = &components[1 + 2 * d + s];
            for (k, u) in comp.lattice.iter().enumerate() {
                let lat = -hw + 2.0 * hw * u.x;
                let h = -hw + 2.0 * hw * u.y;
                let a = len * u.z;
                out[comp.start + k] = joint + digit.lateral * lat + up * h + along * a;
            }
            joint = joint + along * (len + GAP);
        }
    }
    out
}

/// Mesh of the hand proxy in world coordinates. The left hand is the x-negation of
/// the right hand for the same pose; face lists are identical for both.
pub fn generate_hand_proxy(pose: &HandPose, hand: HandLabel) -> Result<TriMesh> {
    pose.validate()?;
    let topo = hand_topology();
    let rot = Mat3::from_euler(pose.rotation);
    let t = Vec3::from(pose.translation);
    let mut verts: Vec<Vec3> =
        articulate(&topo.components, pose).into_iter().map(|p| rot.mul_vec(p) + t).collect();
    if hand == HandLabel::Left {
        for v in &mut verts {
            v.x = -v.x;
        }
    }
    TriMesh::new(verts, topo.faces.clone(), topo.canonical_coords.clone(), hand)
}
