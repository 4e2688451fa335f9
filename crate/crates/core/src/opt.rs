//! Loss terms, gradients, and the two-stage Adam optimizer.
//!
//! The parameter set is a mixed manifold: per-frame camera poses and
//! per-person local body transforms live on SE(3) and are updated by
//! tangent-space retraction, per-frame scales live in log space, depth
//! corrections are a coarse multiplicative log-field upsampled bilinearly,
//! and intrinsics are plain scalars. Gradients are hand-derived; the test
//! suite checks every parameter class against central finite differences.
//!
//! Loss terms:
//! - 3D correspondence: sum over edges of c * rho(x_i - x_j) with both
//!   match points rebuilt from the current (P, sigma, depth).
//! - 2D reprojection: c * [rho(pi_i(x_i) - pi_i(x_j)) + rho(pi_j(x_i) - pi_j(x_j))],
//!   entries behind either camera skipped and counted.
//! - contact scale: hinge on the 3D gap between a contacting body vertex
//!   and its matched scene point.
//! - contact static: hinge on the world motion of a vertex whose contact
//!   persists across adjacent frames.
//! - prior: Frobenius norm of the homogeneous-matrix difference between
//!   the current and initial body transforms.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::contact::{find_contacts, find_persistent, ContactLink, ContactSearch, PersistentContact};
use crate::geom::{retract, DepthMap, Intrinsics, RigidTransform, TangentVector};
use crate::human::BodyFrame;
use crate::par;
use crate::scene::{ForegroundMask, MatchSet};
use crate::{Error, Result};

/// Robust kernel applied to residual vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RobustKernel {
    /// Plain squared loss, rho(r) = |r|^2 / 2.
    L2,
    /// Huber: quadratic inside `delta`, linear outside.
    Huber { delta: f64 },
}

/// rho(|r|) for a residual slice.
pub fn robust_kernel(r: &[f64], kernel: &RobustKernel) -> f64 {
    let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    robust_of_norm(n, kernel).0
}

/// Returns (rho(n), s) with d rho / d r = s * r.
fn robust_of_norm(n: f64, kernel: &RobustKernel) -> (f64, f64) {
    match *kernel {
        RobustKernel::L2 => (0.5 * n * n, 1.0),
        RobustKernel::Huber { delta } => {
            if n <= delta {
                (0.5 * n * n, 1.0)
            } else {
                (delta * n - 0.5 * delta * delta, delta / n)
            }
        }
    }
}

/// Loss weights and kernel configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_3d: f64,
    pub w_2d: f64,
    pub w_c1: f64,
    pub w_c2: f64,
    pub w_p: f64,
    /// Hinge factor of the contact scale loss (meters).
    pub delta_c1: f64,
    /// Hinge factor of the contact static loss (meters).
    pub delta_c2: f64,
    pub robust_3d: RobustKernel,
    pub robust_2d: RobustKernel,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_3d: 1.0,
            w_2d: 1.0,
            w_c1: 1.0,
            w_c2: 20.0,
            w_p: 10.0,
            delta_c1: 0.0,
            delta_c2: 0.1,
            robust_3d: RobustKernel::Huber { delta: 0.1 },
            robust_2d: RobustKernel::Huber { delta: 5.0 },
        }
    }
}

/// One optimization stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub iterations: usize,
    /// Peak Adam learning rate; decays on a cosine schedule within the stage.
    pub learning_rate: f64,
    pub w_3d: f64,
    pub w_2d: f64,
    pub optimize_pose: bool,
    pub optimize_t_c: bool,
    pub optimize_sigma: bool,
    pub optimize_depth: bool,
    pub optimize_intrinsics: bool,
}

impl StageConfig {
    /// Coarse alignment: 2D term off, only scale, camera pose and local
    /// body transform active.
    pub fn stage1_default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.07,
            w_3d: 1.0,
            w_2d: 0.0,
            optimize_pose: true,
            optimize_t_c: true,
            optimize_sigma: true,
            optimize_depth: false,
            optimize_intrinsics: false,
        }
    }

    /// Refinement: 2D reprojection term on, all parameters active.
    pub fn stage2_default() -> Self {
        Self {
            iterations: 200,
            learning_rate: 0.014,
            w_3d: 0.0,
            w_2d: 1.0,
            optimize_pose: true,
            optimize_t_c: true,
            optimize_sigma: true,
            optimize_depth: true,
            optimize_intrinsics: true,
        }
    }
}

/// Coarse multiplicative log-correction field over a depth map, sampled
/// bilinearly at full-resolution pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionField {
    pub width: usize,
    pub height: usize,
    pub full_width: usize,
    pub full_height: usize,
    pub coeffs: Vec<f64>,
}

impl CorrectionField {
    /// `down` is the per-side downsampling factor (default 4).
    pub fn new(full_width: usize, full_height: usize, down: usize) -> Self {
        let width = full_width.div_ceil(down).max(1);
        let height = full_height.div_ceil(down).max(1);
        Self {
            width,
            height,
            full_width,
            full_height,
            coeffs: vec![0.0; width * height],
        }
    }

    /// Bilinear weights at a full-resolution pixel: up to 4 (index, weight).
    pub fn weights(&self, px: Vector2<f64>) -> [(usize, f64); 4] {
        let map = |p: f64, full: usize, coarse: usize| -> f64 {
            if full <= 1 || coarse <= 1 {
                0.0
            } else {
                (p * (coarse - 1) as f64 / (full - 1) as f64).clamp(0.0, (coarse - 1) as f64)
            }
        };
        let x = map(px.x, self.full_width, self.width);
        let y = map(px.y, self.full_height, self.height);
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        [
            (y0 * self.width + x0, (1.0 - fx) * (1.0 - fy)),
            (y0 * self.width + x1, fx * (1.0 - fy)),
            (y1 * self.width + x0, (1.0 - fx) * fy),
            (y1 * self.width + x1, fx * fy),
        ]
    }

    pub fn sample(&self, px: Vector2<f64>) -> f64 {
        self.weights(px)
            .iter()
            .map(|&(i, w)| self.coeffs[i] * w)
            .sum()
    }
}

/// Scene-side state of one optimized frame.
#[derive(Debug, Clone)]
pub struct FrameParams {
    pub frame_id: usize,
    pub pose: RigidTransform,
    pub log_sigma: f64,
    /// Foreground-trimmed, pre-scale depth map.
    pub depth: DepthMap,
    pub mask: ForegroundMask,
    pub correction: CorrectionField,
}

impl FrameParams {
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    /// Depth map with the multiplicative correction folded in.
    pub fn corrected_depth(&self) -> DepthMap {
        let mut d = self.depth.clone();
        for v in 0..d.height {
            for u in 0..d.width {
                let i = d.idx(u, v);
                if d.valid[i] {
                    d.values[i] *= self.correction.sample(Vector2::new(u as f64, v as f64)).exp();
                }
            }
        }
        d
    }
}

/// One person's optimizable state, aligned with the problem's frames.
#[derive(Debug, Clone)]
pub struct PersonParams {
    pub person_id: u32,
    /// Body geometry per frame; the `t_c` field of each body holds the
    /// *initial* transform, used by the prior loss.
    pub bodies: Vec<BodyFrame>,
    /// Current local transforms.
    pub t_c: Vec<RigidTransform>,
}

/// A self-contained joint-optimization problem over one set of frames
/// (typically the keyframes of one segment).
///
/// `matches[..].edge` and the `frame_id` of contact links index into
/// `frames` by position.
#[derive(Debug, Clone)]
pub struct Problem {
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameParams>,
    pub persons: Vec<PersonParams>,
    pub matches: Vec<MatchSet>,
    /// Per person: contact links over all frames.
    pub links: Vec<Vec<ContactLink>>,
    /// Per person: contacts persisting between adjacent frames.
    pub persistent: Vec<Vec<PersistentContact>>,
}

impl Problem {
    /// Recompute contact correspondences from the current parameters.
    pub fn refresh_contacts(&mut self, search: &ContactSearch) {
        let frames = &self.frames;
        let intr = self.intrinsics;
        self.links.clear();
        self.persistent.clear();
        for person in &self.persons {
            let per_frame: Vec<Vec<ContactLink>> = par::map_range(0..frames.len(), |f| {
                let mut bf = person.bodies[f].clone();
                bf.t_c = person.t_c[f];
                bf.frame_id = f;
                find_contacts(
                    &bf,
                    &frames[f].pose,
                    &intr,
                    &frames[f].depth,
                    frames[f].sigma(),
                    &frames[f].mask,
                    search,
                )
            });
            let mut persist = Vec::new();
            for f in 0..frames.len().saturating_sub(1) {
                persist.extend(find_persistent(&per_frame[f], &per_frame[f + 1]));
            }
            self.links.push(per_frame.into_iter().flatten().collect());
            self.persistent.push(persist);
        }
    }
}

/// Which parameter classes the flat vector covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveParams {
    pub pose: bool,
    pub t_c: bool,
    pub sigma: bool,
    pub depth: bool,
    pub intrinsics: bool,
}

impl ActiveParams {
    pub fn from_stage(s: &StageConfig) -> Self {
        Self {
            pose: s.optimize_pose,
            t_c: s.optimize_t_c,
            sigma: s.optimize_sigma,
            depth: s.optimize_depth,
            intrinsics: s.optimize_intrinsics,
        }
    }

    pub fn all() -> Self {
        Self {
            pose: true,
            t_c: true,
            sigma: true,
            depth: true,
            intrinsics: true,
        }
    }
}

/// Offsets of every active parameter block in the flat vector.
///
/// SE(3) blocks are 6 wide, ordered [omega, v]; intrinsics are
/// [fx, fy, cx, cy].
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub pose_off: Vec<Option<usize>>,
    pub t_c_off: Vec<Vec<Option<usize>>>,
    pub sigma_off: Vec<Option<usize>>,
    pub depth_off: Vec<Option<usize>>,
    pub intr_off: Option<usize>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(problem: &Problem, active: &ActiveParams) -> Self {
        let nf = problem.frames.len();
        let mut next = 0usize;
        let mut take = |n: usize| {
            let off = next;
            next += n;
            off
        };
        let pose_off = (0..nf)
            .map(|_| active.pose.then(|| take(6)))
            .collect();
        let t_c_off = problem
            .persons
            .iter()
            .map(|_| (0..nf).map(|_| active.t_c.then(|| take(6))).collect())
            .collect();
        let sigma_off = (0..nf).map(|_| active.sigma.then(|| take(1))).collect();
        let depth_off = problem
            .frames
            .iter()
            .map(|f| active.depth.then(|| take(f.correction.coeffs.len())))
            .collect();
        let intr_off = active.intrinsics.then(|| take(4));
        Self {
            pose_off,
            t_c_off,
            sigma_off,
            depth_off,
            intr_off,
            len: next,
        }
    }
}

/// Apply a flat tangent-space delta: retraction on SE(3) blocks, additive
/// on log-scale, depth coefficients and intrinsics.
pub fn apply_delta(problem: &mut Problem, layout: &ParamLayout, delta: &[f64]) {
    debug_assert_eq!(delta.len(), layout.len);
    let tv = |off: usize| TangentVector {
        omega: Vector3::new(delta[off], delta[off + 1], delta[off + 2]),
        v: Vector3::new(delta[off + 3], delta[off + 4], delta[off + 5]),
    };
    for (f, fr) in problem.frames.iter_mut().enumerate() {
        if let Some(off) = layout.pose_off[f] {
            fr.pose = retract(&fr.pose, &tv(off));
        }
        if let Some(off) = layout.sigma_off[f] {
            fr.log_sigma += delta[off];
        }
        if let Some(off) = layout.depth_off[f] {
            for (k, c) in fr.correction.coeffs.iter_mut().enumerate() {
                *c += delta[off + k];
            }
        }
    }
    for (p, person) in problem.persons.iter_mut().enumerate() {
        for (f, t_c) in person.t_c.iter_mut().enumerate() {
            if let Some(off) = layout.t_c_off[p][f] {
                *t_c = retract(t_c, &tv(off));
            }
        }
    }
    if let Some(off) = layout.intr_off {
        problem.intrinsics.fx += delta[off];
        problem.intrinsics.fy += delta[off + 1];
        problem.intrinsics.cx += delta[off + 2];
        problem.intrinsics.cy += delta[off + 3];
    }
}

/// Unweighted value of each loss term plus the weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l3d: f64,
    pub l2d: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub lp: f64,
    pub per_person: Vec<PersonTerms>,
    pub skipped_2d: usize,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonTerms {
    pub lc1: f64,
    pub lc2: f64,
    pub lp: f64,
}

// ---------------------------------------------------------------------------
// gradient plumbing

/// Sparse gradient contributions, merged sequentially in a fixed order.
type Sparse = Vec<(usize, f64)>;

fn add3(sp: &mut Sparse, off: usize, v: Vector3<f64>) {
    sp.push((off, v.x));
    sp.push((off + 1, v.y));
    sp.push((off + 2, v.z));
}

/// A world point built as x = P (s * q0) with s = sigma * exp(corr(pixel)),
/// carrying what backpropagation needs.
struct ScenePoint {
    frame: usize,
    /// camera-frame point including scale and correction
    q: Vector3<f64>,
    x: Vector3<f64>,
    corr: [(usize, f64); 4],
}

fn scene_point(problem: &Problem, frame: usize, prescale: Vector3<f64>, pixel: Vector2<f64>) -> ScenePoint {
    let fr = &problem.frames[frame];
    let corr = fr.correction.weights(pixel);
    let c: f64 = corr.iter().map(|&(i, w)| fr.correction.coeffs[i] * w).sum();
    let q = prescale * (fr.log_sigma + c).exp();
    ScenePoint {
        frame,
        q,
        x: fr.pose.apply(q),
        corr,
    }
}

/// Accumulate dL/d(params) for a scene point given g = dL/dx.
fn backprop_scene_point(
    problem: &Problem,
    layout: &ParamLayout,
    sp: &mut Sparse,
    pt: &ScenePoint,
    g: Vector3<f64>,
) {
    let fr = &problem.frames[pt.frame];
    let h = fr.rotation_t_mul(g);
    if let Some(off) = layout.pose_off[pt.frame] {
        add3(sp, off, pt.q.cross(&h));
        add3(sp, off + 3, h);
    }
    let s = h.dot(&pt.q);
    if let Some(off) = layout.sigma_off[pt.frame] {
        sp.push((off, s));
    }
    if let Some(off) = layout.depth_off[pt.frame] {
        for &(i, w) in &pt.corr {
            if w != 0.0 {
                sp.push((off + i, s * w));
            }
        }
    }
}

impl FrameParams {
    fn rotation_t_mul(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.transpose() * v
    }
}

/// A world point built as x = P (T_c v_b).
struct BodyPoint {
    frame: usize,
    person: usize,
    v_b: Vector3<f64>,
    /// camera-frame position T_c v_b
    q: Vector3<f64>,
    x: Vector3<f64>,
}

fn body_point(problem: &Problem, person: usize, frame: usize, vertex: usize) -> BodyPoint {
    let per = &problem.persons[person];
    let v_b = per.bodies[frame].vertices[vertex];
    let q = per.t_c[frame].apply(v_b);
    BodyPoint {
        frame,
        person,
        v_b,
        q,
        x: problem.frames[frame].pose.apply(q),
    }
}

fn backprop_body_point(
    problem: &Problem,
    layout: &ParamLayout,
    sp: &mut Sparse,
    pt: &BodyPoint,
    g: Vector3<f64>,
) {
    let fr = &problem.frames[pt.frame];
    let h = fr.rotation_t_mul(g);
    if let Some(off) = layout.pose_off[pt.frame] {
        add3(sp, off, pt.q.cross(&h));
        add3(sp, off + 3, h);
    }
    if let Some(off) = layout.t_c_off[pt.person][pt.frame] {
        let h2 = problem.persons[pt.person].t_c[pt.frame].rotation.transpose() * h;
        add3(sp, off, pt.v_b.cross(&h2));
        add3(sp, off + 3, h2);
    }
}

/// Project a world point into a frame's camera; `None` when at or behind
/// the image plane. Returns (pixel, camera-frame point).
fn project_into(problem: &Problem, frame: usize, x: Vector3<f64>) -> Option<(Vector2<f64>, Vector3<f64>)> {
    let fr = &problem.frames[frame];
    let q = fr.pose.rotation.transpose() * (x - fr.pose.translation);
    if q.z <= 1e-6 {
        return None;
    }
    let k = &problem.intrinsics;
    Some((
        Vector2::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy),
        q,
    ))
}

/// Backpropagate dL/d(pixel) through a projection; returns dL/dx_world.
fn backprop_projection(
    problem: &Problem,
    layout: &ParamLayout,
    sp: &mut Sparse,
    frame: usize,
    q: Vector3<f64>,
    gpix: Vector2<f64>,
) -> Vector3<f64> {
    let k = &problem.intrinsics;
    let dq = Vector3::new(
        gpix.x * k.fx / q.z,
        gpix.y * k.fy / q.z,
        -(gpix.x * k.fx * q.x + gpix.y * k.fy * q.y) / (q.z * q.z),
    );
    if let Some(off) = layout.pose_off[frame] {
        add3(sp, off, -q.cross(&dq));
        add3(sp, off + 3, -dq);
    }
    if let Some(off) = layout.intr_off {
        sp.push((off, gpix.x * q.x / q.z));
        sp.push((off + 1, gpix.y * q.y / q.z));
        sp.push((off + 2, gpix.x));
        sp.push((off + 3, gpix.y));
    }
    problem.frames[frame].pose.rotation * dq
}

// ---------------------------------------------------------------------------
// per-edge and per-person terms

struct EdgeResult {
    l3d: f64,
    l2d: f64,
    skipped: usize,
    grad: Sparse,
}

fn eval_edge(
    problem: &Problem,
    cfg: &LossConfig,
    set: &MatchSet,
    layout: Option<&ParamLayout>,
) -> EdgeResult {
    let (fi, fj) = set.edge;
    let mut l3d = 0.0;
    let mut l2d = 0.0;
    let mut skipped = 0usize;
    let mut grad: Sparse = Vec::new();

    for e in &set.entries {
        let c = e.confidence.clamp(0.0, 1.0);
        let pi = scene_point(problem, fi, e.point_i, e.pixel_i);
        let pj = scene_point(problem, fj, e.point_j, e.pixel_j);

        // 3D correspondence
        let r = pi.x - pj.x;
        let (rho, s) = robust_of_norm(r.norm(), &cfg.robust_3d);
        l3d += c * rho;
        if let Some(layout) = layout {
            if cfg.w_3d != 0.0 {
                let g = r * (cfg.w_3d * c * s);
                backprop_scene_point(problem, layout, &mut grad, &pi, g);
                backprop_scene_point(problem, layout, &mut grad, &pj, -g);
            }
        }

        // 2D reprojection: both points into both frames
        let projections = (
            project_into(problem, fi, pi.x),
            project_into(problem, fi, pj.x),
            project_into(problem, fj, pi.x),
            project_into(problem, fj, pj.x),
        );
        let (Some(ii), Some(ij), Some(ji), Some(jj)) = projections else {
            skipped += 1;
            continue;
        };
        let r_i = ii.0 - ij.0;
        let r_j = ji.0 - jj.0;
        let (rho_i, s_i) = robust_of_norm(r_i.norm(), &cfg.robust_2d);
        let (rho_j, s_j) = robust_of_norm(r_j.norm(), &cfg.robust_2d);
        l2d += c * (rho_i + rho_j);
        if let Some(layout) = layout {
            if cfg.w_2d != 0.0 {
                let w = cfg.w_2d * c;
                for (gpix, frame, proj, pt) in [
                    (r_i * (w * s_i), fi, &ii, &pi),
                    (-r_i * (w * s_i), fi, &ij, &pj),
                    (r_j * (w * s_j), fj, &ji, &pi),
                    (-r_j * (w * s_j), fj, &jj, &pj),
                ] {
                    let gx = backprop_projection(problem, layout, &mut grad, frame, proj.1, gpix);
                    backprop_scene_point(problem, layout, &mut grad, pt, gx);
                }
            }
        }
    }
    EdgeResult {
        l3d,
        l2d,
        skipped,
        grad,
    }
}

struct PersonResult {
    terms: PersonTerms,
    grad: Sparse,
}

fn eval_person(
    problem: &Problem,
    cfg: &LossConfig,
    person: usize,
    layout: Option<&ParamLayout>,
) -> PersonResult {
    let mut grad: Sparse = Vec::new();
    let mut lc1 = 0.0;
    let mut lc2 = 0.0;
    let mut lp = 0.0;

    // contact scale loss over links
    for link in &problem.links[person] {
        let bp = body_point(problem, person, link.frame_id, link.vertex_index);
        let spt = scene_point(problem, link.frame_id, link.scene_prescale, link.scene_pixel);
        let r = bp.x - spt.x;
        let n = r.norm();
        if n > cfg.delta_c1 {
            lc1 += n - cfg.delta_c1;
            if let Some(layout) = layout {
                if cfg.w_c1 != 0.0 && n > 1e-12 {
                    let g = r * (cfg.w_c1 / n);
                    backprop_body_point(problem, layout, &mut grad, &bp, g);
                    backprop_scene_point(problem, layout, &mut grad, &spt, -g);
                }
            }
        }
    }

    // contact static loss over persistent contacts
    for pc in &problem.persistent[person] {
        let a = body_point(problem, person, pc.frame_id, pc.vertex_index);
        let b = body_point(problem, person, pc.frame_id + 1, pc.vertex_index);
        let r = a.x - b.x;
        let n = r.norm();
        if n > cfg.delta_c2 {
            lc2 += n - cfg.delta_c2;
            if let Some(layout) = layout {
                if cfg.w_c2 != 0.0 && n > 1e-12 {
                    let g = r * (cfg.w_c2 / n);
                    backprop_body_point(problem, layout, &mut grad, &a, g);
                    backprop_body_point(problem, layout, &mut grad, &b, -g);
                }
            }
        }
    }

    // prior loss: Frobenius norm of the homogeneous-matrix difference
    let per = &problem.persons[person];
    for (f, (t_c, body)) in per.t_c.iter().zip(&per.bodies).enumerate() {
        let d_r: Matrix3<f64> = t_c.rotation - body.t_c.rotation;
        let d_t: Vector3<f64> = t_c.translation - body.t_c.translation;
        let d = (d_r.norm_squared() + d_t.norm_squared()).sqrt();
        lp += d;
        if let Some(layout) = layout {
            if let Some(off) = layout.t_c_off[person][f] {
                if cfg.w_p != 0.0 && d > 1e-12 {
                    let m = t_c.rotation.transpose() * d_r * (cfg.w_p / d);
                    let g_omega = Vector3::new(
                        m[(2, 1)] - m[(1, 2)],
                        m[(0, 2)] - m[(2, 0)],
                        m[(1, 0)] - m[(0, 1)],
                    );
                    add3(&mut grad, off, g_omega);
                    add3(
                        &mut grad,
                        off + 3,
                        t_c.rotation.transpose() * d_t * (cfg.w_p / d),
                    );
                }
            }
        }
    }

    PersonResult {
        terms: PersonTerms { lc1, lc2, lp },
        grad,
    }
}

fn eval_internal(
    problem: &Problem,
    cfg: &LossConfig,
    layout: Option<&ParamLayout>,
) -> (LossBreakdown, Vec<f64>) {
    let edge_results: Vec<EdgeResult> =
        par::map_slice(&problem.matches, |set| eval_edge(problem, cfg, set, layout));
    let person_results: Vec<PersonResult> = par::map_range(0..problem.persons.len(), |p| {
        eval_person(problem, cfg, p, layout)
    });

    let mut grad = vec![0.0; layout.map_or(0, |l| l.len)];
    let mut bd = LossBreakdown {
        l3d: 0.0,
        l2d: 0.0,
        lc1: 0.0,
        lc2: 0.0,
        lp: 0.0,
        per_person: Vec::new(),
        skipped_2d: 0,
        total: 0.0,
    };
    for er in &edge_results {
        bd.l3d += er.l3d;
        bd.l2d += er.l2d;
        bd.skipped_2d += er.skipped;
        for &(i, v) in &er.grad {
            grad[i] += v;
        }
    }
    for pr in &person_results {
        bd.lc1 += pr.terms.lc1;
        bd.lc2 += pr.terms.lc2;
        bd.lp += pr.terms.lp;
        bd.per_person.push(pr.terms);
        for &(i, v) in &pr.grad {
            grad[i] += v;
        }
    }
    bd.total = cfg.w_3d * bd.l3d
        + cfg.w_2d * bd.l2d
        + cfg.w_c1 * bd.lc1
        + cfg.w_c2 * bd.lc2
        + cfg.w_p * bd.lp;
    (bd, grad)
}

/// Weighted total loss with per-term breakdown.
pub fn total_loss(problem: &Problem, cfg: &LossConfig) -> LossBreakdown {
    eval_internal(problem, cfg, None).0
}

/// 3D correspondence loss (unweighted).
pub fn loss_3d(problem: &Problem, cfg: &LossConfig) -> f64 {
    total_loss(problem, cfg).l3d
}

/// 2D reprojection loss (unweighted) plus the skipped-entry count.
pub fn loss_2d(problem: &Problem, cfg: &LossConfig) -> (f64, usize) {
    let bd = total_loss(problem, cfg);
    (bd.l2d, bd.skipped_2d)
}

/// Contact scale loss (unweighted, all persons).
pub fn loss_contact_scale(problem: &Problem, cfg: &LossConfig) -> f64 {
    total_loss(problem, cfg).lc1
}

/// Contact static loss (unweighted, all persons).
pub fn loss_contact_static(problem: &Problem, cfg: &LossConfig) -> f64 {
    total_loss(problem, cfg).lc2
}

/// Prior loss (unweighted, all persons).
pub fn loss_prior(problem: &Problem) -> f64 {
    total_loss(problem, &LossConfig::default()).lp
}

/// Weighted total plus the gradient with respect to every active
/// parameter's tangent coordinates.
pub fn loss_and_grad(
    problem: &Problem,
    layout: &ParamLayout,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (bd, grad) = eval_internal(problem, cfg, Some(layout));
    if !bd.total.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    Ok((bd, grad))
}

// ---------------------------------------------------------------------------
// Adam

/// Standard Adam moments over the flat tangent vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update; returns the delta to apply.
    pub fn step(&mut self, grad: &[f64], lr: f64) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                -lr * m_hat / (v_hat.sqrt() + self.eps)
            })
            .collect()
    }
}

/// One Adam step applied to the problem in place.
pub fn adam_step(
    problem: &mut Problem,
    layout: &ParamLayout,
    state: &mut AdamState,
    grad: &[f64],
    lr: f64,
) {
    let delta = state.step(grad, lr);
    apply_delta(problem, layout, &delta);
}

// ---------------------------------------------------------------------------
// two-stage schedule

/// One line of the loss history stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub iteration: usize,
    pub l3d: f64,
    pub l2d: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub lp: f64,
    pub total: f64,
}

impl IterationRecord {
    fn new(stage: usize, iteration: usize, bd: &LossBreakdown) -> Self {
        Self {
            stage,
            iteration,
            l3d: bd.l3d,
            l2d: bd.l2d,
            lc1: bd.lc1,
            lc2: bd.lc2,
            lp: bd.lp,
            total: bd.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub history: Vec<IterationRecord>,
    /// Set when a non-finite loss aborted a stage: (stage, iteration).
    /// Parameters are left at the last finite state.
    pub aborted: Option<(usize, usize)>,
}

/// Snapshot of every optimizable parameter, for best-state restore.
#[derive(Debug, Clone)]
struct ParamSnapshot {
    poses: Vec<RigidTransform>,
    log_sigmas: Vec<f64>,
    corrections: Vec<Vec<f64>>,
    t_c: Vec<Vec<RigidTransform>>,
    intrinsics: Intrinsics,
}

impl ParamSnapshot {
    fn take(p: &Problem) -> Self {
        Self {
            poses: p.frames.iter().map(|f| f.pose).collect(),
            log_sigmas: p.frames.iter().map(|f| f.log_sigma).collect(),
            corrections: p.frames.iter().map(|f| f.correction.coeffs.clone()).collect(),
            t_c: p.persons.iter().map(|pe| pe.t_c.clone()).collect(),
            intrinsics: p.intrinsics,
        }
    }

    fn restore(&self, p: &mut Problem) {
        for (f, fr) in p.frames.iter_mut().enumerate() {
            fr.pose = self.poses[f];
            fr.log_sigma = self.log_sigmas[f];
            fr.correction.coeffs.clone_from(&self.corrections[f]);
        }
        for (i, pe) in p.persons.iter_mut().enumerate() {
            pe.t_c.clone_from(&self.t_c[i]);
        }
        p.intrinsics = self.intrinsics;
    }
}

const CONTACT_REFRESH_INTERVAL: usize = 100;

fn run_stage(
    problem: &mut Problem,
    stage_idx: usize,
    stage: &StageConfig,
    base_cfg: &LossConfig,
    search: &ContactSearch,
    history: &mut Vec<IterationRecord>,
) -> Option<(usize, usize)> {
    let cfg = LossConfig {
        w_3d: stage.w_3d,
        w_2d: stage.w_2d,
        ..*base_cfg
    };
    problem.refresh_contacts(search);
    let layout = ParamLayout::new(problem, &ActiveParams::from_stage(stage));
    let mut adam = AdamState::new(layout.len);
    let mut best: Option<(f64, ParamSnapshot)> = None;
    let mut last_reset = 0usize;

    for it in 0..stage.iterations {
        // correspondences found at a wrong scale pin the solve to that scale;
        // re-search periodically so contacts track the current geometry. The
        // best-state tracker and the Adam moments reset because the objective
        // changes, and a hinge spike otherwise inflates the second moment for
        // hundreds of iterations.
        if it > 0 && it % CONTACT_REFRESH_INTERVAL == 0 {
            problem.refresh_contacts(search);
            best = None;
            adam = AdamState::new(layout.len);
            last_reset = it;
        }
        let (bd, grad) = match loss_and_grad(problem, &layout, &cfg) {
            Ok(x) => x,
            Err(_) => {
                if let Some((_, snap)) = &best {
                    snap.restore(problem);
                }
                return Some((stage_idx, it));
            }
        };
        history.push(IterationRecord::new(stage_idx, it, &bd));
        if best.as_ref().map_or(true, |(b, _)| bd.total < *b) {
            best = Some((bd.total, ParamSnapshot::take(problem)));
        }
        // linear warmup into a cosine decay from the peak rate to zero;
        // without the warmup Adam's first unit-magnitude steps kick every
        // coordinate by the full rate and destabilize the hinge terms
        let warmup = (stage.iterations / 20).max(1);
        let ramp = (((it - last_reset) + 1) as f64 / warmup as f64).min(1.0);
        let lr = ramp
            * stage.learning_rate
            * 0.5
            * (1.0 + (std::f64::consts::PI * it as f64 / stage.iterations as f64).cos());
        adam_step(problem, &layout, &mut adam, &grad, lr);
    }

    if stage.iterations > 0 {
        let bd = total_loss(problem, &cfg);
        if let Some((b, snap)) = &best {
            if !bd.total.is_finite() || bd.total > *b {
                snap.restore(problem);
            }
        }
        let final_bd = total_loss(problem, &cfg);
        history.push(IterationRecord::new(stage_idx, stage.iterations, &final_bd));
    }
    None
}

/// Run the two-stage schedule in place. Contact correspondences are
/// recomputed at each stage start and every 100 iterations after that;
/// between refreshes the objective is fixed and a stage never ends above
/// the best loss visited since the last refresh.
pub fn run_two_stage(
    problem: &mut Problem,
    stage1: &StageConfig,
    stage2: &StageConfig,
    cfg: &LossConfig,
    search: &ContactSearch,
    _seed: u64,
) -> OptimizeReport {
    let mut history = Vec::new();
    let mut aborted = run_stage(problem, 1, stage1, cfg, search, &mut history);
    if aborted.is_none() {
        aborted = run_stage(problem, 2, stage2, cfg, search, &mut history);
    }
    OptimizeReport { history, aborted }
}
