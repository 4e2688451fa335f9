//! Synthetic walking scenarios with exact ground truth.
//!
//! The world is y-up with a ground plane at y = 0 and a few axis-aligned
//! boxes. A camera dollies alongside one or more walking people. Depth
//! maps are ray-cast from the static scene only and stored pre-scale
//! (metric depth divided by the true per-frame scale), masks cover the
//! projected body hull except the feet, and cross-frame matches are
//! sampled from the ground-truth geometry. Everything is deterministic in
//! the spec seed: counter-keyed RNG streams make each frame's noise
//! independent of evaluation order.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{retract, DepthMap, Intrinsics, RigidTransform, TangentVector};
use crate::human::{template_body, BodyFrame, BodySequence};
use crate::scene::{trim_pointmap, ForegroundMask, MatchEntry, MatchSet};

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

/// Static scene: implicit ground plane at y = 0 plus boxes.
#[derive(Debug, Clone)]
pub struct SceneModel {
    pub boxes: Vec<Aabb>,
    pub max_range: f64,
}

impl Default for SceneModel {
    fn default() -> Self {
        Self {
            boxes: vec![
                Aabb {
                    min: Vector3::new(0.6, 0.0, -2.2),
                    max: Vector3::new(1.4, 0.6, -1.4),
                },
                Aabb {
                    min: Vector3::new(2.6, 0.0, -1.2),
                    max: Vector3::new(3.4, 1.0, -0.5),
                },
            ],
            max_range: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub frame_count: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// True metric scale of every frame's pre-scale depth map.
    pub sigma_star: f64,
    pub person_count: usize,
    /// Stride length in meters.
    pub step_length: f64,
    /// Frames per step.
    pub step_frames: usize,
    /// Peak swing-foot lift in meters.
    pub lift_height: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            frame_count: 50,
            fps: 25.0,
            width: 64,
            height: 48,
            focal: 60.0,
            sigma_star: 2.0,
            person_count: 1,
            step_length: 0.4,
            step_frames: 10,
            lift_height: 0.05,
            seed: 7,
        }
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone)]
pub struct FrameTruth {
    /// Metric camera-to-world extrinsics.
    pub pose: RigidTransform,
    /// Scene-only pre-scale depth.
    pub depth: DepthMap,
    /// Union of the projected body hulls above the knees.
    pub mask: ForegroundMask,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub intrinsics: Intrinsics,
    pub scene: SceneModel,
    pub frames: Vec<FrameTruth>,
    /// Metric ground-truth body sequences; `t_c` fields are the true
    /// camera-frame transforms and contact flags mark the stance sole.
    pub people: Vec<BodySequence>,
}

/// Camera-to-world rotation looking from `eye` toward `target` with the
/// camera frame x-right / y-down / z-forward.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> RigidTransform {
    let f = (target - eye).normalize();
    let r = f.cross(&up).normalize();
    let d = f.cross(&r);
    let mut rot = Matrix3::zeros();
    rot.set_column(0, &r);
    rot.set_column(1, &d);
    rot.set_column(2, &f);
    RigidTransform::new(rot, eye)
}

fn rng_for(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let key = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    ChaCha8Rng::seed_from_u64(key)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn normal3(rng: &mut ChaCha8Rng, std: f64) -> Vector3<f64> {
    Vector3::new(normal(rng), normal(rng), normal(rng)) * std
}

// ---------------------------------------------------------------------------
// ray casting

fn ray_ground(origin: Vector3<f64>, dir: Vector3<f64>) -> Option<f64> {
    if dir.y >= -1e-12 {
        return None;
    }
    let t = -origin.y / dir.y;
    (t > 1e-6).then_some(t)
}

fn ray_box(origin: Vector3<f64>, dir: Vector3<f64>, b: &Aabb) -> Option<f64> {
    let mut t0 = 1e-6f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k] < b.min[k] || origin[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let a = (b.min[k] - origin[k]) / dir[k];
        let c = (b.max[k] - origin[k]) / dir[k];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1).then_some(t0)
}

/// Depth along the camera z-axis of the nearest scene hit, in meters.
fn cast(scene: &SceneModel, origin: Vector3<f64>, dir: Vector3<f64>) -> Option<f64> {
    let mut best = ray_ground(origin, dir);
    for b in &scene.boxes {
        if let Some(t) = ray_box(origin, dir, b) {
            best = Some(best.map_or(t, |x: f64| x.min(t)));
        }
    }
    best.filter(|&t| t <= scene.max_range)
}

fn render_depth(
    scene: &SceneModel,
    k: &Intrinsics,
    pose: &RigidTransform,
    sigma_star: f64,
) -> DepthMap {
    let mut d = DepthMap::new(k.width, k.height);
    for v in 0..k.height {
        for u in 0..k.width {
            // ray() has unit camera-z, so the hit parameter is the z-depth
            let dir = pose.rotation * k.ray(u as f64, v as f64);
            if let Some(t) = cast(scene, pose.translation, dir) {
                let i = d.idx(u, v);
                d.values[i] = t / sigma_star;
                d.valid[i] = true;
            }
        }
    }
    d
}

// ---------------------------------------------------------------------------
// mask rasterization

/// Monotone-chain convex hull; returns counter-clockwise vertices.
fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let it: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in it {
            while hull.len() >= start + 2
                && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn rasterize_hulls(width: usize, height: usize, hulls: &[Vec<Vector2<f64>>]) -> ForegroundMask {
    let mut mask = ForegroundMask::empty(width, height);
    for hull in hulls {
        if hull.len() < 3 {
            continue;
        }
        let (mut lo, mut hi) = (hull[0], hull[0]);
        for p in hull {
            lo = Vector2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vector2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let u0 = lo.x.floor().max(0.0) as usize;
        let v0 = lo.y.floor().max(0.0) as usize;
        let u1 = (hi.x.ceil() as isize).clamp(0, width as isize - 1) as usize;
        let v1 = (hi.y.ceil() as isize).clamp(0, height as isize - 1) as usize;
        for v in v0..=v1 {
            'pixel: for u in u0..=u1 {
                let p = Vector2::new(u as f64, v as f64);
                for i in 0..hull.len() {
                    let a = hull[i];
                    let b = hull[(i + 1) % hull.len()];
                    if (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) < 0.0 {
                        continue 'pixel;
                    }
                }
                mask.grid[v * width + u] = true;
            }
        }
    }
    mask
}

// ---------------------------------------------------------------------------
// gait

struct Gait {
    root_x: f64,
    /// body-frame x displacement of the (left, right) foot boxes
    dx: (f64, f64),
    /// body-frame y lift of the (left, right) foot boxes
    dy: (f64, f64),
    left_stance: bool,
}

fn gait_at(spec: &ScenarioSpec, t: usize) -> Gait {
    let s = spec.step_length;
    let d = spec.step_frames;
    let j = t / d;
    let phase = (t % d) as f64 / d as f64;
    let stance_dx = -s * phase;
    let swing_dx = s * (phase - 1.0);
    let lift = spec.lift_height * (std::f64::consts::PI * phase).sin();
    let left_stance = j % 2 == 0;
    let (dx, dy) = if left_stance {
        ((stance_dx, swing_dx), (0.0, lift))
    } else {
        ((swing_dx, stance_dx), (lift, 0.0))
    };
    Gait {
        root_x: t as f64 * s / d as f64,
        dx,
        dy,
        left_stance,
    }
}

fn person_lateral(p: usize) -> f64 {
    p as f64 * 0.9
}

/// Body in the root frame at frame `t`: template with the foot boxes and
/// toe joints displaced by the gait.
fn body_at(spec: &ScenarioSpec, t: usize, person: usize) -> (BodyFrame, RigidTransform) {
    let tpl = template_body();
    let g = gait_at(spec, t);
    let mut vertices = tpl.vertices.clone();
    let mut joints = tpl.joints.clone();
    for &i in &tpl.left_foot_box {
        vertices[i] += Vector3::new(g.dx.0, g.dy.0, 0.0);
    }
    for &i in &tpl.right_foot_box {
        vertices[i] += Vector3::new(g.dx.1, g.dy.1, 0.0);
    }
    joints[20] += Vector3::new(g.dx.0, g.dy.0, 0.0); // l_toe
    joints[21] += Vector3::new(g.dx.1, g.dy.1, 0.0); // r_toe

    let mut contact = vec![false; vertices.len()];
    let sole = if g.left_stance {
        &tpl.left_sole
    } else {
        &tpl.right_sole
    };
    for &i in sole {
        contact[i] = true;
    }

    let t_g = RigidTransform::from_translation(Vector3::new(
        g.root_x,
        crate::human::LEG_DROP,
        person_lateral(person),
    ));
    (
        BodyFrame {
            vertices,
            joints,
            t_c: RigidTransform::identity(), // filled by the caller
            contact,
            person_id: person as u32,
            frame_id: t,
        },
        t_g,
    )
}

fn camera_at(spec: &ScenarioSpec, t: usize) -> RigidTransform {
    let g = gait_at(spec, t);
    let eye = Vector3::new(g.root_x - 1.2, 1.5 + 0.05 * (t as f64 * 0.21).sin(), 3.0);
    let target = Vector3::new(g.root_x + 0.3, 0.7, 0.0);
    look_at(eye, target, Vector3::new(0.0, 1.0, 0.0))
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Scenario {
    let k = Intrinsics {
        fx: spec.focal,
        fy: spec.focal,
        cx: spec.width as f64 / 2.0 - 0.5,
        cy: spec.height as f64 / 2.0 - 0.5,
        width: spec.width,
        height: spec.height,
    };
    let scene = SceneModel::default();
    let tpl = template_body();
    // Mask hulls stop at the knees: everything below stays background so
    // foot contacts remain visible to the correspondence search, matching
    // the scene-only depth maps (which never contain the body either).
    let below_knee: Vec<bool> = tpl.vertices.iter().map(|v| v.y < -0.5).collect();

    // per-person, per-frame bodies with the true camera-frame transform
    let mut people: Vec<BodySequence> = (0..spec.person_count)
        .map(|_| BodySequence {
            frames: Vec::with_capacity(spec.frame_count),
            fps: spec.fps,
        })
        .collect();
    let poses: Vec<RigidTransform> = (0..spec.frame_count).map(|t| camera_at(spec, t)).collect();
    for t in 0..spec.frame_count {
        for (p, seq) in people.iter_mut().enumerate() {
            let (mut bf, t_g) = body_at(spec, t, p);
            bf.t_c = poses[t].inverse().compose(&t_g);
            seq.frames.push(bf);
        }
    }

    let frames: Vec<FrameTruth> = crate::par::map_range(0..spec.frame_count, |t| {
        let depth = render_depth(&scene, &k, &poses[t], spec.sigma_star);
        // mask: union over people of the hull of non-foot vertices
        let hulls: Vec<Vec<Vector2<f64>>> = (0..spec.person_count)
            .map(|p| {
                let bf = &people[p].frames[t];
                let t_g = poses[t].compose(&bf.t_c);
                let pts = bf
                    .vertices
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !below_knee[*i])
                    .filter_map(|(_, &vb)| {
                        crate::geom::project(&k, &poses[t], t_g.apply(vb)).ok()
                    })
                    .collect();
                convex_hull(pts)
            })
            .collect();
        FrameTruth {
            pose: poses[t],
            mask: rasterize_hulls(spec.width, spec.height, &hulls),
            depth,
        }
    });

    Scenario {
        spec: spec.clone(),
        intrinsics: k,
        scene,
        frames,
        people,
    }
}

// ---------------------------------------------------------------------------
// perturbation

/// What corruption to apply when deriving an initialization from ground
/// truth. All-zero noise with `sigma_init` equal to the true scale
/// reproduces the ground truth exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Multiplicative log-normal depth noise (std of the log factor).
    pub depth_noise_std: f64,
    /// Gaussian noise on pre-scale match points, meters.
    pub match_noise_std: f64,
    pub match_outlier_fraction: f64,
    /// Tangent-space noise on initial camera poses.
    pub pose_noise_std: f64,
    /// Tangent-space noise on initial body transforms.
    pub t_c_noise_std: f64,
    /// Assumed scale of the initialization; camera translations are
    /// scaled by `sigma_init / sigma_star` to stay self-consistent.
    pub sigma_init: f64,
    /// Per-frame jitter on the initial log-scale.
    pub sigma_noise_std: f64,
    /// Fraction of contact flags flipped in the initialization.
    pub contact_flip_rate: f64,
    /// Injected foot-slide: sawtooth world-x offset on the initial body
    /// transforms, this many meters per frame within each step.
    pub slide_per_frame: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            depth_noise_std: 0.0,
            match_noise_std: 0.0,
            match_outlier_fraction: 0.0,
            pose_noise_std: 0.0,
            t_c_noise_std: 0.0,
            sigma_init: 1.0,
            sigma_noise_std: 0.0,
            contact_flip_rate: 0.0,
            slide_per_frame: 0.0,
        }
    }
}

impl NoiseSpec {
    /// Mild corruption on every channel.
    pub fn mild() -> Self {
        Self {
            depth_noise_std: 0.01,
            match_noise_std: 0.005,
            match_outlier_fraction: 0.02,
            pose_noise_std: 0.01,
            t_c_noise_std: 0.01,
            sigma_init: 1.0,
            sigma_noise_std: 0.02,
            contact_flip_rate: 0.02,
            slide_per_frame: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InitFrame {
    pub frame_id: usize,
    pub pose: RigidTransform,
    pub sigma: f64,
    /// Noisy pre-scale depth with foreground pixels invalidated.
    pub depth: DepthMap,
    pub mask: ForegroundMask,
}

#[derive(Debug, Clone)]
pub struct Initialization {
    pub intrinsics: Intrinsics,
    pub fps: f64,
    pub frames: Vec<InitFrame>,
    /// Per person: noisy body estimates (`t_c` holds the initial
    /// camera-frame transform, contact flags possibly flipped).
    pub people: Vec<BodySequence>,
}

const TAG_DEPTH: u64 = 1;
const TAG_POSE: u64 = 2;
const TAG_SIGMA: u64 = 3;
const TAG_TC: u64 = 100;
const TAG_FLIP: u64 = 200;
const TAG_MATCH: u64 = 300;

pub fn perturb_initialization(sc: &Scenario, noise: &NoiseSpec) -> Initialization {
    let spec = &sc.spec;
    let scale_ratio = noise.sigma_init / spec.sigma_star;

    let frames: Vec<InitFrame> = crate::par::map_range(0..spec.frame_count, |t| {
        let truth = &sc.frames[t];
        let mut depth = truth.depth.clone();
        if noise.depth_noise_std > 0.0 {
            let mut rng = rng_for(spec.seed, t as u64, TAG_DEPTH);
            for (z, &ok) in depth.values.iter_mut().zip(&depth.valid) {
                if ok {
                    *z *= (normal(&mut rng) * noise.depth_noise_std).exp();
                }
            }
        }
        let depth = trim_pointmap(&depth, &truth.mask).expect("mask and depth share dims");

        let mut pose = RigidTransform::new(truth.pose.rotation, truth.pose.translation * scale_ratio);
        if noise.pose_noise_std > 0.0 {
            let mut rng = rng_for(spec.seed, t as u64, TAG_POSE);
            pose = retract(
                &pose,
                &TangentVector::new(
                    normal3(&mut rng, noise.pose_noise_std),
                    normal3(&mut rng, noise.pose_noise_std),
                ),
            );
        }

        let mut sigma = noise.sigma_init;
        if noise.sigma_noise_std > 0.0 {
            let mut rng = rng_for(spec.seed, t as u64, TAG_SIGMA);
            sigma *= (normal(&mut rng) * noise.sigma_noise_std).exp();
        }

        InitFrame {
            frame_id: t,
            pose,
            sigma,
            depth,
            mask: truth.mask.clone(),
        }
    });

    let people: Vec<BodySequence> = sc
        .people
        .iter()
        .enumerate()
        .map(|(p, seq)| {
            let frames = seq
                .frames
                .iter()
                .enumerate()
                .map(|(t, bf)| {
                    let mut out = bf.clone();
                    // slide: sawtooth world-x offset resetting each step
                    if noise.slide_per_frame != 0.0 {
                        let phase = (t % spec.step_frames) as f64;
                        let offset = Vector3::new(noise.slide_per_frame * phase, 0.0, 0.0);
                        let t_g = sc.frames[t].pose.compose(&bf.t_c);
                        let slid =
                            RigidTransform::new(t_g.rotation, t_g.translation + offset);
                        out.t_c = sc.frames[t].pose.inverse().compose(&slid);
                    }
                    if noise.t_c_noise_std > 0.0 {
                        let mut rng = rng_for(spec.seed, t as u64, TAG_TC + p as u64);
                        out.t_c = retract(
                            &out.t_c,
                            &TangentVector::new(
                                normal3(&mut rng, noise.t_c_noise_std),
                                normal3(&mut rng, noise.t_c_noise_std),
                            ),
                        );
                    }
                    if noise.contact_flip_rate > 0.0 {
                        let mut rng = rng_for(spec.seed, t as u64, TAG_FLIP + p as u64);
                        for c in out.contact.iter_mut() {
                            if rng.gen::<f64>() < noise.contact_flip_rate {
                                *c = !*c;
                            }
                        }
                    }
                    out
                })
                .collect();
            BodySequence {
                frames,
                fps: seq.fps,
            }
        })
        .collect();

    Initialization {
        intrinsics: sc.intrinsics,
        fps: spec.fps,
        frames,
        people,
    }
}

/// Sample ground-truth matches for the given frame pairs. Points are
/// pre-scale camera-frame positions with integer source pixels; both
/// sides see the same metric world point up to the requested noise.
pub fn make_matches(
    sc: &Scenario,
    noise: &NoiseSpec,
    pairs: &[(usize, usize)],
    per_edge: usize,
) -> Vec<MatchSet> {
    crate::par::map_slice(pairs, |&(i, j)| {
        let mut rng = rng_for(sc.spec.seed, (i as u64) << 20 | j as u64, TAG_MATCH);
        let fi = &sc.frames[i];
        let fj = &sc.frames[j];
        let sigma = sc.spec.sigma_star;
        let mut entries = Vec::with_capacity(per_edge);
        let mut attempts = 0;
        while entries.len() < per_edge && attempts < per_edge * 50 {
            attempts += 1;
            let u = rng.gen_range(0..fi.depth.width);
            let v = rng.gen_range(0..fi.depth.height);
            let idx = fi.depth.idx(u, v);
            let pixel_i = Vector2::new(u as f64, v as f64);
            if !fi.depth.valid[idx] || fi.mask.is_foreground(pixel_i) {
                continue;
            }
            let q_i = sc.intrinsics.ray(u as f64, v as f64) * fi.depth.values[idx];
            let world = fi.pose.apply(q_i * sigma);
            let q_j_metric = fj.pose.rotation.transpose() * (world - fj.pose.translation);
            if q_j_metric.z <= 0.05 {
                continue;
            }
            let Ok(pixel_j) = crate::geom::project(&sc.intrinsics, &fj.pose, world) else {
                continue;
            };
            let (uj, vj) = (pixel_j.x.round(), pixel_j.y.round());
            if uj < 0.0 || vj < 0.0 || uj >= fj.depth.width as f64 || vj >= fj.depth.height as f64 {
                continue;
            }
            if fj.mask.is_foreground(pixel_j) {
                continue;
            }
            let jdx = fj.depth.idx(uj as usize, vj as usize);
            if !fj.depth.valid[jdx] {
                continue;
            }
            // occlusion: frame j must see (nearly) the same surface
            let seen = fj.depth.values[jdx] * sigma;
            if (seen - q_j_metric.z).abs() > 0.02 + 0.01 * q_j_metric.z {
                continue;
            }

            let mut point_i = q_i;
            let mut point_j = q_j_metric / sigma;
            let mut confidence = 0.8 + 0.2 * rng.gen::<f64>();
            if noise.match_noise_std > 0.0 {
                point_i += normal3(&mut rng, noise.match_noise_std);
                point_j += normal3(&mut rng, noise.match_noise_std);
            }
            if noise.match_outlier_fraction > 0.0 && rng.gen::<f64>() < noise.match_outlier_fraction
            {
                point_j += Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                confidence = 0.3;
            }
            entries.push(MatchEntry {
                point_i,
                point_j,
                pixel_i,
                pixel_j,
                confidence,
            });
        }
        MatchSet {
            edge: (i, j),
            entries,
        }
    })
}

// ---------------------------------------------------------------------------
// ground-truth accessors

/// Metric world points of the static scene, every `stride`-th valid pixel
/// of every frame.
pub fn gt_scene_cloud(sc: &Scenario, stride: usize) -> Vec<Vector3<f64>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for f in &sc.frames {
        let mut n = 0usize;
        for v in 0..f.depth.height {
            for u in 0..f.depth.width {
                let i = f.depth.idx(u, v);
                if !f.depth.valid[i] {
                    continue;
                }
                if n % stride == 0 {
                    let q = sc.intrinsics.ray(u as f64, v as f64)
                        * (f.depth.values[i] * sc.spec.sigma_star);
                    out.push(f.pose.apply(q));
                }
                n += 1;
            }
        }
    }
    out
}

/// Metric world joints of one person, per frame.
pub fn gt_world_joints(sc: &Scenario, person: usize) -> Vec<Vec<Vector3<f64>>> {
    sc.people[person]
        .frames
        .iter()
        .zip(&sc.frames)
        .map(|(bf, fr)| {
            let t_g = fr.pose.compose(&bf.t_c);
            bf.joints.iter().map(|&j| t_g.apply(j)).collect()
        })
        .collect()
}

/// Metric camera trajectory.
pub fn gt_trajectory(sc: &Scenario) -> Vec<RigidTransform> {
    sc.frames.iter().map(|f| f.pose).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_spec() -> ScenarioSpec {
        ScenarioSpec {
            frame_count: 12,
            ..Default::default()
        }
    }

    #[test]
    fn look_at_is_proper_and_centers_target() {
        let eye = Vector3::new(1.0, 2.0, 3.0);
        let target = Vector3::new(0.5, 0.0, -1.0);
        let p = look_at(eye, target, Vector3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(p.rotation.determinant(), 1.0, epsilon = 1e-12);
        assert!(p.rotation_defect() < 1e-12);
        let k = Intrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 32.0,
            cy: 24.0,
            width: 64,
            height: 48,
        };
        let px = crate::geom::project(&k, &p, target).unwrap();
        assert_relative_eq!(px.x, 32.0, epsilon = 1e-9);
        assert_relative_eq!(px.y, 24.0, epsilon = 1e-9);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(&small_spec());
        let b = generate_scenario(&small_spec());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.depth.values, fb.depth.values);
            assert_eq!(fa.mask.grid, fb.mask.grid);
            assert_eq!(fa.pose, fb.pose);
        }
        let na = NoiseSpec::mild();
        let ia = perturb_initialization(&a, &na);
        let ib = perturb_initialization(&b, &na);
        for (x, y) in ia.frames.iter().zip(&ib.frames) {
            assert_eq!(x.pose, y.pose);
            assert_eq!(x.depth.values, y.depth.values);
            assert_eq!(x.sigma, y.sigma);
        }
        let ma = make_matches(&a, &na, &[(0, 5), (5, 11)], 40);
        let mb = make_matches(&b, &na, &[(0, 5), (5, 11)], 40);
        assert_eq!(ma.len(), mb.len());
        for (sa, sb) in ma.iter().zip(&mb) {
            assert_eq!(sa.entries, sb.entries);
        }
    }

    #[test]
    fn depth_pixels_lie_on_scene_surfaces() {
        let sc = generate_scenario(&small_spec());
        let f = &sc.frames[3];
        let mut checked = 0;
        for v in 0..f.depth.height {
            for u in 0..f.depth.width {
                let i = f.depth.idx(u, v);
                if !f.depth.valid[i] {
                    continue;
                }
                let q = sc.intrinsics.ray(u as f64, v as f64)
                    * (f.depth.values[i] * sc.spec.sigma_star);
                let x = f.pose.apply(q);
                let on_ground = x.y.abs() < 1e-9;
                let on_box = sc.scene.boxes.iter().any(|b| {
                    (0..3).all(|k| x[k] >= b.min[k] - 1e-9 && x[k] <= b.max[k] + 1e-9)
                });
                assert!(on_ground || on_box, "pixel ({}, {}) hit {:?}", u, v, x);
                checked += 1;
            }
        }
        assert!(checked > 500, "too few valid depth pixels: {}", checked);
    }

    #[test]
    fn stance_soles_touch_the_ground_exactly() {
        let sc = generate_scenario(&small_spec());
        let tpl = template_body();
        for (t, bf) in sc.people[0].frames.iter().enumerate() {
            let t_g = sc.frames[t].pose.compose(&bf.t_c);
            let g = gait_at(&sc.spec, t);
            let sole = if g.left_stance {
                &tpl.left_sole
            } else {
                &tpl.right_sole
            };
            for &i in sole {
                assert!(bf.contact[i]);
                let w = t_g.apply(bf.vertices[i]);
                assert_relative_eq!(w.y, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn stance_foot_is_static_within_a_step() {
        let sc = generate_scenario(&small_spec());
        let tpl = template_body();
        // frames 0..9 are one step with the left foot planted
        let world = |t: usize, i: usize| {
            let bf = &sc.people[0].frames[t];
            sc.frames[t].pose.compose(&bf.t_c).apply(bf.vertices[i])
        };
        for t in 1..sc.spec.step_frames {
            for &i in &tpl.left_sole {
                assert_relative_eq!((world(t, i) - world(0, i)).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn contact_vertices_project_outside_the_mask() {
        let sc = generate_scenario(&small_spec());
        let mut seen = 0;
        for (t, bf) in sc.people[0].frames.iter().enumerate() {
            let f = &sc.frames[t];
            let t_g = f.pose.compose(&bf.t_c);
            for (i, &c) in bf.contact.iter().enumerate() {
                if !c {
                    continue;
                }
                if let Ok(px) = crate::geom::project(&sc.intrinsics, &f.pose, t_g.apply(bf.vertices[i]))
                {
                    if px.x >= 0.0
                        && px.y >= 0.0
                        && px.x < f.mask.width as f64
                        && px.y < f.mask.height as f64
                    {
                        assert!(!f.mask.is_foreground(px), "contact vertex masked at t={}", t);
                        seen += 1;
                    }
                }
            }
        }
        assert!(seen > 20, "too few visible contact vertices: {}", seen);
    }

    #[test]
    fn zero_noise_initialization_reproduces_ground_truth() {
        let sc = generate_scenario(&small_spec());
        let noise = NoiseSpec {
            sigma_init: sc.spec.sigma_star,
            ..Default::default()
        };
        let init = perturb_initialization(&sc, &noise);
        for (f, gt) in init.frames.iter().zip(&sc.frames) {
            assert_eq!(f.pose, gt.pose);
            assert_eq!(f.sigma, sc.spec.sigma_star);
        }
        for (p, seq) in init.people.iter().enumerate() {
            for (t, bf) in seq.frames.iter().enumerate() {
                assert_eq!(bf.t_c, sc.people[p].frames[t].t_c);
                assert_eq!(bf.contact, sc.people[p].frames[t].contact);
            }
        }
    }

    #[test]
    fn wrong_scale_init_scales_camera_translations() {
        let sc = generate_scenario(&small_spec());
        let init = perturb_initialization(
            &sc,
            &NoiseSpec {
                sigma_init: 1.0,
                ..Default::default()
            },
        );
        let r = 1.0 / sc.spec.sigma_star;
        for (f, gt) in init.frames.iter().zip(&sc.frames) {
            assert_relative_eq!(
                (f.pose.translation - gt.pose.translation * r).norm(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn matches_are_consistent_world_points() {
        let sc = generate_scenario(&small_spec());
        let sets = make_matches(&sc, &NoiseSpec::default(), &[(0, 5), (2, 8)], 60);
        for set in &sets {
            assert!(set.entries.len() >= 30, "edge {:?} starved", set.edge);
            let (i, j) = set.edge;
            for e in &set.entries {
                let wi = sc.frames[i].pose.apply(e.point_i * sc.spec.sigma_star);
                let wj = sc.frames[j].pose.apply(e.point_j * sc.spec.sigma_star);
                assert_relative_eq!((wi - wj).norm(), 0.0, epsilon = 1e-9);
                // source pixel agrees with the stored point
                let px = crate::geom::project(&sc.intrinsics, &sc.frames[i].pose, wi).unwrap();
                assert_relative_eq!(px.x, e.pixel_i.x, epsilon = 1e-6);
                assert_relative_eq!(px.y, e.pixel_i.y, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn slide_injection_moves_held_contacts() {
        let sc = generate_scenario(&small_spec());
        let slid = perturb_initialization(
            &sc,
            &NoiseSpec {
                sigma_init: sc.spec.sigma_star,
                slide_per_frame: 0.05,
                ..Default::default()
            },
        );
        let tpl = template_body();
        // within the first step the left sole should now drift
        let world = |t: usize, i: usize| {
            let bf = &slid.people[0].frames[t];
            slid.frames[t].pose.compose(&bf.t_c).apply(bf.vertices[i])
        };
        let drift = (world(5, tpl.left_sole[0]) - world(0, tpl.left_sole[0])).norm();
        assert_relative_eq!(drift, 0.25, epsilon = 1e-9);
    }
}
