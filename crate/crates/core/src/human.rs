//! Per-frame body representation.
//!
//! Bodies arrive already posed: vertices and joints are fixed in the body
//! root frame after ingestion, and only the camera-from-body transform
//! `T_c` is replaced by the optimizer. Pose and shape parameters never
//! appear here.

use nalgebra::Vector3;

use crate::geom::{self, RigidTransform};
use crate::{Error, Result};

/// One person-frame: posed geometry in the body root frame plus the local
/// camera-from-body transform and per-vertex contact labels.
#[derive(Debug, Clone)]
pub struct BodyFrame {
    /// Posed vertices in the body root frame (meters), fixed after init.
    pub vertices: Vec<Vector3<f64>>,
    /// Joints in the body root frame (meters).
    pub joints: Vec<Vector3<f64>>,
    /// Camera-from-body transform.
    pub t_c: RigidTransform,
    /// Per-vertex contact label.
    pub contact: Vec<bool>,
    pub person_id: u32,
    pub frame_id: usize,
}

/// Ordered person-frames at a fixed frame rate.
#[derive(Debug, Clone)]
pub struct BodySequence {
    pub frames: Vec<BodyFrame>,
    pub fps: f64,
}

/// A named invariant violation found by [`validate_sequence`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Index into `frames`, when the violation is frame-local.
    pub frame_index: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.frame_index {
            Some(i) => write!(f, "frame {}: {}: {}", i, self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

/// World positions of the body vertices under camera pose `p`.
pub fn world_vertices(bf: &BodyFrame, p: &RigidTransform) -> Vec<Vector3<f64>> {
    geom::body_to_world(p, &bf.t_c, &bf.vertices)
}

/// World positions of the body joints under camera pose `p`.
pub fn world_joints(bf: &BodyFrame, p: &RigidTransform) -> Vec<Vector3<f64>> {
    geom::body_to_world(p, &bf.t_c, &bf.joints)
}

/// Check every [`BodySequence`] invariant, returning one entry per
/// violation. Diagnostics, not exceptions: an empty list means valid.
pub fn validate_sequence(seq: &BodySequence) -> Vec<Violation> {
    let mut out = Vec::new();
    if seq.frames.is_empty() {
        out.push(Violation {
            frame_index: None,
            field: "frames",
            message: "sequence is empty".into(),
        });
        return out;
    }
    let n = seq.frames[0].vertices.len();
    let j = seq.frames[0].joints.len();
    let pid = seq.frames[0].person_id;
    if n == 0 {
        out.push(Violation {
            frame_index: Some(0),
            field: "vertices",
            message: "vertex count must be >= 1".into(),
        });
    }
    if j == 0 {
        out.push(Violation {
            frame_index: Some(0),
            field: "joints",
            message: "joint count must be >= 1".into(),
        });
    }
    let mut last_id: Option<usize> = None;
    for (i, f) in seq.frames.iter().enumerate() {
        if f.vertices.len() != n {
            out.push(Violation {
                frame_index: Some(i),
                field: "vertices",
                message: format!("vertex count {} differs from {}", f.vertices.len(), n),
            });
        }
        if f.joints.len() != j {
            out.push(Violation {
                frame_index: Some(i),
                field: "joints",
                message: format!("joint count {} differs from {}", f.joints.len(), j),
            });
        }
        if f.contact.len() != f.vertices.len() {
            out.push(Violation {
                frame_index: Some(i),
                field: "contact",
                message: format!(
                    "contact label count {} differs from vertex count {}",
                    f.contact.len(),
                    f.vertices.len()
                ),
            });
        }
        if f.person_id != pid {
            out.push(Violation {
                frame_index: Some(i),
                field: "person_id",
                message: format!("person id {} differs from {}", f.person_id, pid),
            });
        }
        if f.vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            out.push(Violation {
                frame_index: Some(i),
                field: "vertices",
                message: "non-finite vertex".into(),
            });
        }
        if let Some(prev) = last_id {
            if f.frame_id <= prev {
                out.push(Violation {
                    frame_index: Some(i),
                    field: "frame_id",
                    message: format!("frame_id {} not greater than previous {}", f.frame_id, prev),
                });
            }
        }
        last_id = Some(f.frame_id);
    }
    out
}

/// Interpolate `T_c` at a fractional frame index: slerp on rotation, lerp
/// on translation between the bracketing frames. Exact at stored frames.
pub fn interpolate_t_c(seq: &BodySequence, t: f64) -> Result<RigidTransform> {
    let first = seq.frames.first().map(|f| f.frame_id as f64);
    let last = seq.frames.last().map(|f| f.frame_id as f64);
    let (lo, hi) = match (first, last) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::OutOfRange {
                value: t,
                lo: 0.0,
                hi: 0.0,
            })
        }
    };
    if t < lo || t > hi {
        return Err(Error::OutOfRange { value: t, lo, hi });
    }
    // exact hit
    if let Some(f) = seq.frames.iter().find(|f| f.frame_id as f64 == t) {
        return Ok(f.t_c);
    }
    let hi_idx = seq
        .frames
        .iter()
        .position(|f| (f.frame_id as f64) > t)
        .expect("t <= last frame id");
    let a = &seq.frames[hi_idx - 1];
    let b = &seq.frames[hi_idx];
    let s = (t - a.frame_id as f64) / (b.frame_id as f64 - a.frame_id as f64);
    geom::interpolate(&a.t_c, &b.t_c, s)
}

/// The built-in template body used by the synthetic oracle: a 12-box
/// figure with 96 vertices and 24 joints, plus index groups for the
/// contact regions (foot soles and hands).
///
/// Conventions: root frame y up, x forward (walking direction), origin at
/// the pelvis center. Foot soles sit `LEG_DROP` below the root origin.
#[derive(Debug, Clone)]
pub struct TemplateBody {
    /// Rest-pose vertices in the root frame.
    pub vertices: Vec<Vector3<f64>>,
    /// Rest-pose joints in the root frame.
    pub joints: Vec<Vector3<f64>>,
    pub left_sole: Vec<usize>,
    pub right_sole: Vec<usize>,
    pub left_hand: Vec<usize>,
    pub right_hand: Vec<usize>,
    /// All vertex indices of the left / right foot boxes.
    pub left_foot_box: Vec<usize>,
    pub right_foot_box: Vec<usize>,
}

/// Vertical distance from the root origin (pelvis center) down to the
/// foot soles in the rest pose.
pub const LEG_DROP: f64 = 0.91;

pub const TEMPLATE_VERTEX_COUNT: usize = 96;
pub const TEMPLATE_JOINT_COUNT: usize = 24;

fn push_box(
    verts: &mut Vec<Vector3<f64>>,
    center: Vector3<f64>,
    half: Vector3<f64>,
) -> Vec<usize> {
    let base = verts.len();
    // bottom face (min y) first, then top: sole lookup uses the first 4
    for &sy in &[-1.0, 1.0] {
        for &sz in &[-1.0, 1.0] {
            for &sx in &[-1.0, 1.0] {
                verts.push(center + Vector3::new(sx * half.x, sy * half.y, sz * half.z));
            }
        }
    }
    (base..base + 8).collect()
}

pub fn template_body() -> TemplateBody {
    let mut v = Vec::with_capacity(TEMPLATE_VERTEX_COUNT);
    let side = 0.10; // lateral offset of each leg from the midline

    push_box(&mut v, Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.08, 0.09, 0.15));
    push_box(&mut v, Vector3::new(0.0, 0.18, 0.0), Vector3::new(0.075, 0.09, 0.13));
    push_box(&mut v, Vector3::new(0.0, 0.38, 0.0), Vector3::new(0.08, 0.11, 0.15));
    push_box(&mut v, Vector3::new(0.0, 0.62, 0.0), Vector3::new(0.09, 0.10, 0.08));
    let l_arm = push_box(&mut v, Vector3::new(0.0, 0.17, 0.25), Vector3::new(0.04, 0.28, 0.04));
    let r_arm = push_box(&mut v, Vector3::new(0.0, 0.17, -0.25), Vector3::new(0.04, 0.28, 0.04));
    let l_thigh = push_box(&mut v, Vector3::new(0.0, -0.27, side), Vector3::new(0.06, 0.21, 0.06));
    let l_shin = push_box(&mut v, Vector3::new(0.0, -0.67, side), Vector3::new(0.05, 0.19, 0.05));
    let l_foot = push_box(
        &mut v,
        Vector3::new(0.05, -LEG_DROP + 0.025, side),
        Vector3::new(0.11, 0.025, 0.045),
    );
    let r_thigh = push_box(&mut v, Vector3::new(0.0, -0.27, -side), Vector3::new(0.06, 0.21, 0.06));
    let r_shin = push_box(&mut v, Vector3::new(0.0, -0.67, -side), Vector3::new(0.05, 0.19, 0.05));
    let r_foot = push_box(
        &mut v,
        Vector3::new(0.05, -LEG_DROP + 0.025, -side),
        Vector3::new(0.11, 0.025, 0.045),
    );
    let _ = (l_thigh, l_shin, r_thigh, r_shin);
    assert_eq!(v.len(), TEMPLATE_VERTEX_COUNT);

    let joints = vec![
        Vector3::new(0.0, 0.0, 0.0),          // pelvis
        Vector3::new(0.0, 0.10, 0.0),         // spine1
        Vector3::new(0.0, 0.22, 0.0),         // spine2
        Vector3::new(0.0, 0.34, 0.0),         // spine3
        Vector3::new(0.0, 0.50, 0.0),         // neck
        Vector3::new(0.0, 0.62, 0.0),         // head
        Vector3::new(0.0, 0.46, 0.10),        // l_collar
        Vector3::new(0.0, 0.46, -0.10),       // r_collar
        Vector3::new(0.0, 0.45, 0.25),        // l_shoulder
        Vector3::new(0.0, 0.45, -0.25),       // r_shoulder
        Vector3::new(0.0, 0.17, 0.25),        // l_elbow
        Vector3::new(0.0, 0.17, -0.25),       // r_elbow
        Vector3::new(0.0, -0.11, 0.25),       // l_wrist
        Vector3::new(0.0, -0.11, -0.25),      // r_wrist
        Vector3::new(0.0, -0.06, side),       // l_hip
        Vector3::new(0.0, -0.06, -side),      // r_hip
        Vector3::new(0.0, -0.48, side),       // l_knee
        Vector3::new(0.0, -0.48, -side),      // r_knee
        Vector3::new(0.0, -0.86, side),       // l_ankle
        Vector3::new(0.0, -0.86, -side),      // r_ankle
        Vector3::new(0.12, -LEG_DROP, side),  // l_toe
        Vector3::new(0.12, -LEG_DROP, -side), // r_toe
        Vector3::new(0.0, -0.15, 0.25),       // l_hand
        Vector3::new(0.0, -0.15, -0.25),      // r_hand
    ];
    assert_eq!(joints.len(), TEMPLATE_JOINT_COUNT);

    TemplateBody {
        vertices: v,
        joints,
        left_sole: l_foot[..4].to_vec(),
        right_sole: r_foot[..4].to_vec(),
        left_hand: l_arm[..4].to_vec(),
        right_hand: r_arm[..4].to_vec(),
        left_foot_box: l_foot,
        right_foot_box: r_foot,
    }
}
