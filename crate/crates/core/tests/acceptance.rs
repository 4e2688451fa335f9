//! End-to-end acceptance suite. Each test covers one release criterion and
//! prints a single `criterion N ...: pass` line on success (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hsrecon::contact::{ContactLink, ContactSearch, PersistentContact};
use hsrecon::eval::{self, AlignMode};
use hsrecon::geom::{exp_so3, DepthMap, Intrinsics, RigidTransform};
use hsrecon::human::{BodyFrame, BodySequence};
use hsrecon::opt::{
    apply_delta, loss_and_grad, total_loss, ActiveParams, CorrectionField, FrameParams,
    LossConfig, ParamLayout, PersonParams, Problem, RobustKernel, StageConfig,
};
use hsrecon::pipeline::{
    self, split_segments, FrameState, PipelineConfig, Reconstruction, SegmentSolution,
    SequenceInput,
};
use hsrecon::scene::{ForegroundMask, MatchEntry, MatchSet};
use hsrecon::synth::{self, NoiseSpec, Scenario, ScenarioSpec};

// ---------------------------------------------------------------------------
// shared helpers

fn unit_noise(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
}

/// Assemble the optimizer input the same way the CLI does: perturbed
/// initialization plus keyframe-pair matches.
fn make_input(sc: &Scenario, noise: &NoiseSpec, per_edge: usize, cfg: &PipelineConfig) -> SequenceInput {
    let init = synth::perturb_initialization(sc, noise);
    let pairs = pipeline::match_pairs(sc.spec.frame_count, sc.spec.fps, cfg);
    let matches = synth::make_matches(sc, noise, &pairs, per_edge);
    SequenceInput {
        intrinsics: init.intrinsics,
        fps: init.fps,
        frames: init
            .frames
            .iter()
            .map(|f| FrameState {
                pose: f.pose,
                sigma: f.sigma,
                depth: f.depth.clone(),
                mask: f.mask.clone(),
            })
            .collect(),
        people: init.people,
        matches,
    }
}

/// World joints of one person under a reconstruction.
fn rec_world_joints(rec: &Reconstruction, input: &SequenceInput, person: usize) -> Vec<Vec<Vector3<f64>>> {
    input.people[person]
        .frames
        .iter()
        .enumerate()
        .map(|(t, bf)| {
            let t_g = rec.poses[t].compose(&rec.t_c[person][t]);
            bf.joints.iter().map(|&j| t_g.apply(j)).collect()
        })
        .collect()
}

/// Mean world displacement of vertices whose contact flag holds on two
/// adjacent frames.
fn held_contact_displacement(rec: &Reconstruction, input: &SequenceInput) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, seq) in input.people.iter().enumerate() {
        for t in 0..seq.frames.len() - 1 {
            let (a, b) = (&seq.frames[t], &seq.frames[t + 1]);
            let ga = rec.poses[t].compose(&rec.t_c[p][t]);
            let gb = rec.poses[t + 1].compose(&rec.t_c[p][t + 1]);
            for v in 0..a.vertices.len() {
                if a.contact[v] && b.contact[v] {
                    sum += (gb.apply(b.vertices[v]) - ga.apply(a.vertices[v])).norm();
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// criterion 1: analytic gradients vs central finite differences

/// Small dense problem exercising every parameter block and loss term.
fn random_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Intrinsics {
        fx: 10.0,
        fy: 10.0,
        cx: 3.5,
        cy: 2.5,
        width: 8,
        height: 6,
    };
    let rand_pixel = |rng: &mut ChaCha8Rng| {
        Vector2::new(rng.gen::<f64>() * 6.0 + 0.5, rng.gen::<f64>() * 4.0 + 0.5)
    };
    let rand_point = |rng: &mut ChaCha8Rng| {
        Vector3::new(
            rng.gen::<f64>() * 0.8 - 0.4,
            rng.gen::<f64>() * 0.6 - 0.3,
            rng.gen::<f64>() * 1.5 + 1.2,
        )
    };

    let frames: Vec<FrameParams> = (0..2)
        .map(|t| {
            let mut depth = DepthMap::new(k.width, k.height);
            for (i, z) in depth.values.iter_mut().enumerate() {
                *z = 1.5 + rng.gen::<f64>();
                depth.valid[i] = true;
            }
            let mut correction = CorrectionField::new(k.width, k.height, 4);
            for c in &mut correction.coeffs {
                *c = (rng.gen::<f64>() - 0.5) * 0.1;
            }
            FrameParams {
                frame_id: t,
                pose: RigidTransform::new(
                    exp_so3(unit_noise(&mut rng) * 0.2),
                    unit_noise(&mut rng) * 0.4 + Vector3::new(0.0, 0.0, 0.1 * t as f64),
                ),
                log_sigma: (rng.gen::<f64>() - 0.5) * 0.3,
                depth,
                mask: ForegroundMask::empty(k.width, k.height),
                correction,
            }
        })
        .collect();

    let entries: Vec<MatchEntry> = (0..8)
        .map(|_| MatchEntry {
            point_i: rand_point(&mut rng),
            point_j: rand_point(&mut rng),
            pixel_i: rand_pixel(&mut rng),
            pixel_j: rand_pixel(&mut rng),
            confidence: 0.5 + 0.5 * rng.gen::<f64>(),
        })
        .collect();

    let vertices: Vec<Vector3<f64>> = (0..4).map(|_| rand_point(&mut rng)).collect();
    let bodies: Vec<BodyFrame> = (0..2)
        .map(|t| BodyFrame {
            vertices: vertices.clone(),
            joints: vec![Vector3::zeros()],
            t_c: RigidTransform::new(
                exp_so3(unit_noise(&mut rng) * 0.15),
                unit_noise(&mut rng) * 0.3,
            ),
            contact: vec![true, true, true, true],
            person_id: 0,
            frame_id: t,
        })
        .collect();
    let t_c: Vec<RigidTransform> = (0..2)
        .map(|_| {
            RigidTransform::new(
                exp_so3(unit_noise(&mut rng) * 0.15),
                unit_noise(&mut rng) * 0.3,
            )
        })
        .collect();
    let links: Vec<ContactLink> = (0..2)
        .flat_map(|t| {
            let mk = |vi: usize, rng: &mut ChaCha8Rng| ContactLink {
                frame_id: t,
                vertex_index: vi,
                scene_point: Vector3::zeros(),
                scene_prescale: rand_point(rng),
                scene_pixel: rand_pixel(rng),
                pixel_distance: 0.0,
            };
            vec![mk(0, &mut rng), mk(2, &mut rng)]
        })
        .collect();

    Problem {
        intrinsics: k,
        frames,
        persons: vec![PersonParams {
            person_id: 0,
            bodies,
            t_c,
        }],
        matches: vec![MatchSet {
            edge: (0, 1),
            entries,
        }],
        links: vec![links],
        persistent: vec![vec![
            PersistentContact {
                frame_id: 0,
                vertex_index: 0,
            },
            PersistentContact {
                frame_id: 0,
                vertex_index: 2,
            },
        ]],
    }
}

fn check_gradient(problem: &Problem, cfg: &LossConfig, label: &str, seed: u64) {
    let layout = ParamLayout::new(problem, &ActiveParams::all());
    let (_, grad) = loss_and_grad(problem, &layout, cfg).unwrap();
    let h = 1e-5;
    for i in 0..layout.len {
        let mut delta = vec![0.0; layout.len];
        delta[i] = h;
        let mut plus = problem.clone();
        apply_delta(&mut plus, &layout, &delta);
        delta[i] = -h;
        let mut minus = problem.clone();
        apply_delta(&mut minus, &layout, &delta);
        let fd = (total_loss(&plus, cfg).total - total_loss(&minus, cfg).total) / (2.0 * h);
        let err = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1.0);
        assert!(
            err < 1e-4,
            "{} seed {} param {}: analytic {} vs fd {} (rel {})",
            label,
            seed,
            i,
            grad[i],
            fd,
            err
        );
    }
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let zero = LossConfig {
        w_3d: 0.0,
        w_2d: 0.0,
        w_c1: 0.0,
        w_c2: 0.0,
        w_p: 0.0,
        ..LossConfig::default()
    };
    let term_cfgs = [
        ("l3d", LossConfig { w_3d: 1.0, ..zero }),
        ("l2d", LossConfig { w_2d: 1.0, ..zero }),
        ("lc1", LossConfig { w_c1: 1.0, ..zero }),
        ("lc2", LossConfig { w_c2: 1.0, ..zero }),
        ("lp", LossConfig { w_p: 1.0, ..zero }),
        ("total", LossConfig::default()),
    ];
    for seed in 0..100 {
        let problem = random_problem(seed);
        for (label, cfg) in &term_cfgs {
            check_gradient(&problem, cfg, label, seed);
        }
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "gradient check took {:?}", dt);
    println!("criterion 1 (gradient correctness, 100 states x 6 terms): pass ({:?})", dt);
}

// ---------------------------------------------------------------------------
// criterion 2: metric-scale recovery through the contact loss

fn walking_scenario(frame_count: usize, persons: usize) -> Scenario {
    synth::generate_scenario(&ScenarioSpec {
        frame_count,
        person_count: persons,
        ..ScenarioSpec::default()
    })
}

fn scale_noise() -> NoiseSpec {
    NoiseSpec {
        pose_noise_std: 0.005,
        t_c_noise_std: 0.005,
        depth_noise_std: 0.005,
        match_noise_std: 0.003,
        sigma_init: 1.0,
        ..NoiseSpec::default()
    }
}

#[test]
fn criterion_2_contact_recovers_metric_scale() {
    let start = Instant::now();
    let sc = walking_scenario(100, 1);
    let cfg = PipelineConfig::default();
    let input = make_input(&sc, &scale_noise(), 60, &cfg);

    let (rec, _) = pipeline::reconstruct(&input, &cfg).unwrap();
    let gt_poses = synth::gt_trajectory(&sc);
    let init_poses: Vec<RigidTransform> = input.frames.iter().map(|f| f.pose).collect();

    let sigma_err = (mean(&rec.sigmas) - 2.0).abs() / 2.0;
    assert!(sigma_err < 0.02, "recovered scale off by {:.1}%", sigma_err * 100.0);

    let ate_init = eval::ate(&init_poses, &gt_poses).unwrap();
    let ate_opt = eval::ate(&rec.poses, &gt_poses).unwrap();
    assert!(
        ate_opt * 5.0 <= ate_init,
        "ATE improved only {:.2}x ({:.4} -> {:.4})",
        ate_init / ate_opt,
        ate_init,
        ate_opt
    );

    let mut no_contact = cfg;
    no_contact.loss.w_c1 = 0.0;
    let (rec0, _) = pipeline::reconstruct(&input, &no_contact).unwrap();
    let sigma_err0 = (mean(&rec0.sigmas) - 2.0).abs() / 2.0;
    assert!(
        sigma_err0 >= 0.20,
        "scale error without contact only {:.1}%",
        sigma_err0 * 100.0
    );

    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 60.0, "scale recovery took {:?}", dt);
    println!(
        "criterion 2 (scale recovery {:.2}% err, ATE {:.1}x, ablated {:.0}% err): pass ({:?})",
        sigma_err * 100.0,
        ate_init / ate_opt,
        sigma_err0 * 100.0,
        dt
    );
}

// ---------------------------------------------------------------------------
// criterion 3: the static contact loss suppresses foot slide

#[test]
fn criterion_3_static_contact_halves_foot_slide() {
    let start = Instant::now();
    // higher frame rate so the hinge margin per keyframe gap sits well
    // below the injected slide
    let sc = synth::generate_scenario(&ScenarioSpec {
        frame_count: 80,
        fps: 50.0,
        step_frames: 20,
        ..ScenarioSpec::default()
    });
    let noise = NoiseSpec {
        pose_noise_std: 0.003,
        t_c_noise_std: 0.003,
        sigma_init: 2.0,
        slide_per_frame: 0.03,
        ..NoiseSpec::default()
    };
    let cfg = PipelineConfig::default();
    let input = make_input(&sc, &noise, 60, &cfg);

    let mut no_static = cfg;
    no_static.loss.w_c2 = 0.0;
    let (rec_on, _) = pipeline::reconstruct(&input, &cfg).unwrap();
    let (rec_off, _) = pipeline::reconstruct(&input, &no_static).unwrap();

    let disp_on = held_contact_displacement(&rec_on, &input);
    let disp_off = held_contact_displacement(&rec_off, &input);
    assert!(
        disp_on * 2.0 <= disp_off,
        "held-contact displacement {:.4} vs {:.4} without the loss",
        disp_on,
        disp_off
    );

    let gt_joints = synth::gt_world_joints(&sc, 0);
    let w_on = eval::mpjpe_100(
        &rec_world_joints(&rec_on, &input, 0),
        &gt_joints,
        AlignMode::FirstTwoFrames,
    )
    .unwrap();
    let w_off = eval::mpjpe_100(
        &rec_world_joints(&rec_off, &input, 0),
        &gt_joints,
        AlignMode::FirstTwoFrames,
    )
    .unwrap();
    assert!(
        w_on <= w_off * 1.02,
        "W-MPJPE worsened: {:.2} vs {:.2} mm",
        w_on,
        w_off
    );

    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 60.0, "anti-slide run took {:?}", dt);
    println!(
        "criterion 3 (slide {:.1} -> {:.1} mm/frame, W-MPJPE {:.1} vs {:.1} mm): pass ({:?})",
        disp_off * 1000.0,
        disp_on * 1000.0,
        w_off,
        w_on,
        dt
    );
}

// ---------------------------------------------------------------------------
// criterion 4: ablation ordering on the standard benchmark

#[test]
fn criterion_4_ablation_ordering() {
    let sc = walking_scenario(50, 1);
    let noise = scale_noise();
    let cfg = PipelineConfig::default();
    let input = make_input(&sc, &noise, 60, &cfg);
    let gt_joints = synth::gt_world_joints(&sc, 0);
    let gt_poses = synth::gt_trajectory(&sc);

    let score = |cfg: &PipelineConfig| -> (f64, f64) {
        let (rec, _) = pipeline::reconstruct(&input, cfg).unwrap();
        let w = eval::mpjpe_100(
            &rec_world_joints(&rec, &input, 0),
            &gt_joints,
            AlignMode::FirstTwoFrames,
        )
        .unwrap();
        let a = eval::ate(&rec.poses, &gt_poses).unwrap();
        (w, a)
    };

    let mut no_opt = cfg;
    no_opt.stage1.iterations = 0;
    no_opt.stage2.iterations = 0;

    let mut scene_only = cfg;
    scene_only.stage1.optimize_t_c = false;
    scene_only.stage2.optimize_t_c = false;
    scene_only.loss.w_c2 = 0.0;

    let mut with_human = cfg;
    with_human.loss.w_c2 = 0.0;

    let (w_a, ate_a) = score(&no_opt);
    let (w_b, ate_b) = score(&scene_only);
    let (w_c, ate_c) = score(&with_human);
    let (w_d, ate_d) = score(&cfg);

    assert!(w_b < w_a, "scene-only did not beat no-opt: {:.2} vs {:.2}", w_b, w_a);
    assert!(ate_b < ate_a, "scene-only ATE did not improve: {:.4} vs {:.4}", ate_b, ate_a);
    assert!(w_c <= w_b * 1.02, "human opt worsened W-MPJPE: {:.2} vs {:.2}", w_c, w_b);
    assert!(ate_c <= ate_b * 1.02, "human opt worsened ATE: {:.4} vs {:.4}", ate_c, ate_b);
    assert!(w_d <= w_c * 1.02, "static contact worsened W-MPJPE: {:.2} vs {:.2}", w_d, w_c);
    assert!(ate_d <= ate_c * 1.02, "static contact worsened ATE: {:.4} vs {:.4}", ate_d, ate_c);

    println!(
        "criterion 4 (W-MPJPE {:.1} > {:.1} >= {:.1} >= {:.1} mm; ATE {:.3} > {:.3} >= {:.3} >= {:.3} m): pass",
        w_a, w_b, w_c, w_d, ate_a, ate_b, ate_c, ate_d
    );
}

// ---------------------------------------------------------------------------
// criterion 5: chaining relative transforms is exact

#[test]
fn criterion_5_chaining_is_exact() {
    let sc = walking_scenario(60, 1);
    let t_c: Vec<RigidTransform> = sc.people[0].frames.iter().map(|b| b.t_c).collect();
    let t_g: Vec<RigidTransform> = sc
        .frames
        .iter()
        .zip(&t_c)
        .map(|(f, c)| f.pose.compose(c))
        .collect();

    let deltas: Vec<RigidTransform> = t_g
        .windows(2)
        .map(|w| w[1].compose(&w[0].inverse()))
        .collect();
    let chained = pipeline::chain_trajectory(&t_g[0], &deltas);
    for (a, b) in chained.iter().zip(&t_g) {
        assert!((a.translation - b.translation).norm() < 1e-9);
        assert!((a.rotation - b.rotation).norm() < 1e-9);
    }

    let cams = pipeline::camera_from_chain(&t_g, &t_c).unwrap();
    for ((p, c), g) in cams.iter().zip(&t_c).zip(&t_g) {
        let recomposed = p.compose(c);
        assert!((recomposed.translation - g.translation).norm() < 1e-12);
        assert!((recomposed.rotation - g.rotation).norm() < 1e-12);
    }
    println!("criterion 5 (trajectory chaining exact to 1e-9 / 1e-12): pass");
}

// ---------------------------------------------------------------------------
// criterion 6: metric implementations vs independent references

fn ref_kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> RigidTransform {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = nalgebra::Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut fix = nalgebra::Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = u * fix * vt;
    RigidTransform::new(r, cd - r * cs)
}

fn ref_mpjpe(pred: &[Vec<Vector3<f64>>], gt: &[Vec<Vector3<f64>>], full: bool) -> f64 {
    // 100-frame segments, short tail merged into the previous segment
    let mut bounds = Vec::new();
    let mut s = 0;
    while s < pred.len() {
        bounds.push((s, (s + 100).min(pred.len())));
        s += 100;
    }
    if bounds.len() >= 2 && bounds.last().unwrap().1 - bounds.last().unwrap().0 < 10 {
        let tail = bounds.pop().unwrap();
        bounds.last_mut().unwrap().1 = tail.1;
    }
    let mut per_seg = Vec::new();
    for (a, b) in bounds {
        let fit = if full { b - a } else { 2.min(b - a) };
        let src: Vec<Vector3<f64>> = pred[a..a + fit].iter().flatten().copied().collect();
        let dst: Vec<Vector3<f64>> = gt[a..a + fit].iter().flatten().copied().collect();
        let align = ref_kabsch(&src, &dst);
        let mut sum = 0.0;
        let mut n = 0;
        for (pf, gf) in pred[a..b].iter().zip(&gt[a..b]) {
            for (p, g) in pf.iter().zip(gf) {
                sum += (align.apply(*p) - g).norm();
                n += 1;
            }
        }
        per_seg.push(sum / n as f64);
    }
    per_seg.iter().sum::<f64>() / per_seg.len() as f64 * 1000.0
}

#[test]
fn criterion_6_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    // chamfer: exact search equals the O(n*m) brute force
    let cloud = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vector3<f64>> {
        (0..n).map(|_| unit_noise(rng) * 8.0).collect()
    };
    let (a, b) = (cloud(&mut rng, 500), cloud(&mut rng, 500));
    let fast = eval::chamfer(&a, &b).unwrap();
    let brute = eval::chamfer_brute(&a, &b).unwrap();
    assert!((fast - brute).abs() < 1e-12, "{} vs {}", fast, brute);

    for case in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let frames = 110 + (case as usize % 4) * 45;
        let joints = 5;
        let gt: Vec<Vec<Vector3<f64>>> = (0..frames)
            .map(|t| {
                (0..joints)
                    .map(|j| {
                        Vector3::new(0.02 * t as f64, 0.9, -0.01 * t as f64)
                            + unit_noise(&mut rng) * 0.4
                            + Vector3::new(j as f64 * 0.1, 0.0, 0.0)
                    })
                    .collect()
            })
            .collect();
        let pred: Vec<Vec<Vector3<f64>>> = gt
            .iter()
            .map(|f| f.iter().map(|p| p + unit_noise(&mut rng) * 0.05).collect())
            .collect();

        let wa = eval::mpjpe_100(&pred, &gt, AlignMode::Full).unwrap();
        let w = eval::mpjpe_100(&pred, &gt, AlignMode::FirstTwoFrames).unwrap();
        assert!((wa - ref_mpjpe(&pred, &gt, true)).abs() < 1e-9);
        assert!((w - ref_mpjpe(&pred, &gt, false)).abs() < 1e-9);

        // root trajectory metrics
        let groot: Vec<Vector3<f64>> = gt.iter().map(|f| f[0]).collect();
        let proot: Vec<Vector3<f64>> = pred.iter().map(|f| f[0]).collect();
        let align = ref_kabsch(&proot, &groot);
        let path: f64 = groot.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        let ref_rte = proot
            .iter()
            .zip(&groot)
            .map(|(p, g)| (align.apply(*p) - g).norm())
            .sum::<f64>()
            / proot.len() as f64
            / path
            * 100.0;
        assert!((eval::rte(&proot, &groot).unwrap() - ref_rte).abs() < 1e-9);

        let gt_tr: Vec<RigidTransform> = groot.iter().map(|&t| RigidTransform::from_translation(t)).collect();
        let pred_tr: Vec<RigidTransform> = proot.iter().map(|&t| RigidTransform::from_translation(t)).collect();
        let ref_ate = (proot
            .iter()
            .zip(&groot)
            .map(|(p, g)| (align.apply(*p) - g).norm_squared())
            .sum::<f64>()
            / proot.len() as f64)
            .sqrt();
        assert!((eval::ate(&pred_tr, &gt_tr).unwrap() - ref_ate).abs() < 1e-9);

        // depth metrics
        let mut gd = DepthMap::new(12, 9);
        let mut pd = DepthMap::new(12, 9);
        for i in 0..gd.values.len() {
            gd.values[i] = 1.0 + rng.gen::<f64>() * 4.0;
            pd.values[i] = gd.values[i] * (1.0 + (rng.gen::<f64>() - 0.5) * 0.8);
            gd.valid[i] = rng.gen::<f64>() > 0.2;
            pd.valid[i] = rng.gen::<f64>() > 0.2;
        }
        let (abs_rel, delta) = eval::depth_metrics(&[pd.clone()], &[gd.clone()]).unwrap();
        let mut sum = 0.0;
        let mut inl = 0usize;
        let mut n = 0usize;
        for i in 0..gd.values.len() {
            if pd.valid[i] && gd.valid[i] {
                sum += (pd.values[i] - gd.values[i]).abs() / gd.values[i];
                if (pd.values[i] / gd.values[i]).max(gd.values[i] / pd.values[i]) < 1.25 {
                    inl += 1;
                }
                n += 1;
            }
        }
        assert!((abs_rel - sum / n as f64).abs() < 1e-9);
        assert!((delta - inl as f64 / n as f64).abs() < 1e-9);

        // WA-MPJPE of a rigidly moved ground truth is zero
        let t = RigidTransform::new(
            exp_so3(unit_noise(&mut rng)),
            unit_noise(&mut rng) * 3.0,
        );
        let moved: Vec<Vec<Vector3<f64>>> = gt
            .iter()
            .map(|f| f.iter().map(|&p| t.apply(p)).collect())
            .collect();
        let wa0 = eval::mpjpe_100(&moved, &gt, AlignMode::Full).unwrap();
        assert!(wa0 < 1e-6, "WA-MPJPE of rigid copy: {} mm", wa0);
    }
    println!("criterion 6 (chamfer 1e-12, metric references 1e-9, rigid-copy zero): pass");
}

// ---------------------------------------------------------------------------
// criterion 7: multi-person terms add, two-person quality holds

#[test]
fn criterion_7_multi_person_additivity() {
    let sc = walking_scenario(25, 2);
    let init = synth::perturb_initialization(&sc, &NoiseSpec::mild());
    let cfg = PipelineConfig::default();
    let pairs = pipeline::match_pairs(25, sc.spec.fps, &cfg);
    let matches_global = synth::make_matches(&sc, &NoiseSpec::mild(), &pairs, 30);

    // keyframes every 5th frame; remap edges to local indices
    let keyframes: Vec<usize> = (0..25).step_by(5).collect();
    let local = |t: usize| keyframes.iter().position(|&k| k == t);
    let frames: Vec<FrameParams> = keyframes
        .iter()
        .map(|&t| {
            let f = &init.frames[t];
            FrameParams {
                frame_id: t,
                pose: f.pose,
                log_sigma: f.sigma.ln(),
                depth: f.depth.clone(),
                mask: f.mask.clone(),
                correction: CorrectionField::new(f.depth.width, f.depth.height, 4),
            }
        })
        .collect();
    let matches: Vec<MatchSet> = matches_global
        .iter()
        .filter_map(|s| {
            Some(MatchSet {
                edge: (local(s.edge.0)?, local(s.edge.1)?),
                entries: s.entries.clone(),
            })
        })
        .collect();
    let person = |seq: &BodySequence| PersonParams {
        person_id: seq.frames[0].person_id,
        bodies: keyframes.iter().map(|&t| seq.frames[t].clone()).collect(),
        t_c: keyframes.iter().map(|&t| seq.frames[t].t_c).collect(),
    };
    let mut two = Problem {
        intrinsics: init.intrinsics,
        frames,
        persons: init.people.iter().map(person).collect(),
        matches,
        links: Vec::new(),
        persistent: Vec::new(),
    };
    two.refresh_contacts(&ContactSearch::default());

    let mut one = two.clone();
    one.persons.truncate(1);
    one.links.truncate(1);
    one.persistent.truncate(1);

    let loss_cfg = LossConfig::default();
    let bd2 = total_loss(&two, &loss_cfg);
    let bd1 = total_loss(&one, &loss_cfg);
    let second = bd2.per_person[1];
    let expected = bd1.total
        + loss_cfg.w_c1 * second.lc1
        + loss_cfg.w_c2 * second.lc2
        + loss_cfg.w_p * second.lp;
    assert!(
        (bd2.total - expected).abs() < 1e-12,
        "two-person total {} vs one-person + person-2 terms {}",
        bd2.total,
        expected
    );

    // full runs: each person in the two-person scene should optimize about
    // as well as the lone person does
    let sc1 = walking_scenario(50, 1);
    let sc2 = walking_scenario(50, 2);
    let noise = scale_noise();
    let input1 = make_input(&sc1, &noise, 60, &cfg);
    let input2 = make_input(&sc2, &noise, 60, &cfg);
    let (rec1, _) = pipeline::reconstruct(&input1, &cfg).unwrap();
    let (rec2, _) = pipeline::reconstruct(&input2, &cfg).unwrap();

    let w1 = eval::mpjpe_100(
        &rec_world_joints(&rec1, &input1, 0),
        &synth::gt_world_joints(&sc1, 0),
        AlignMode::FirstTwoFrames,
    )
    .unwrap();
    for p in 0..2 {
        let wp = eval::mpjpe_100(
            &rec_world_joints(&rec2, &input2, p),
            &synth::gt_world_joints(&sc2, p),
            AlignMode::FirstTwoFrames,
        )
        .unwrap();
        assert!(
            wp <= w1 * 1.10,
            "person {} W-MPJPE {:.2} vs single-person {:.2} mm",
            p,
            wp,
            w1
        );
    }
    println!("criterion 7 (additivity 1e-12, two-person within 10%): pass");
}

// ---------------------------------------------------------------------------
// criterion 8: determinism and round trips

#[test]
fn criterion_8_determinism_and_round_trips() {
    let sc = walking_scenario(30, 1);
    let mut cfg = PipelineConfig::default();
    cfg.stage1.iterations = 40;
    cfg.stage2.iterations = 15;
    let input = make_input(&sc, &NoiseSpec::mild(), 40, &cfg);

    let (ra, _) = pipeline::reconstruct(&input, &cfg).unwrap();
    let (rb, _) = pipeline::reconstruct(&input, &cfg).unwrap();
    for (a, b) in ra.poses.iter().zip(&rb.poses) {
        assert_eq!(a.rotation, b.rotation);
        assert_eq!(
            a.translation.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.translation.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
    for (a, b) in ra.sigmas.iter().zip(&rb.sigmas) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    // bundle write -> read is the identity on every tensor
    let dir = tempfile::TempDir::new().unwrap();
    let bundle = hsrecon::bundle::Bundle {
        input: input.clone(),
        ground_truth: None,
    };
    hsrecon::bundle::save_bundle(dir.path(), &bundle).unwrap();
    let back = hsrecon::bundle::load_bundle(dir.path()).unwrap();
    for (a, b) in back.input.frames.iter().zip(&input.frames) {
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
        assert_eq!(a.depth, b.depth);
    }

    // splitting a consistent global solution and stitching it back is the
    // identity
    let sc_long = walking_scenario(230, 1);
    let poses = synth::gt_trajectory(&sc_long);
    let t_c: Vec<RigidTransform> = sc_long.people[0].frames.iter().map(|b| b.t_c).collect();
    let solutions: Vec<SegmentSolution> = split_segments(230, 100)
        .into_iter()
        .map(|seg| SegmentSolution {
            keyframes: vec![seg.start, seg.end],
            intrinsics: sc_long.intrinsics,
            poses: poses[seg.start..=seg.end].to_vec(),
            sigmas: vec![2.0; seg.len()],
            depths: vec![DepthMap::new(2, 2); seg.len()],
            t_c: vec![t_c[seg.start..=seg.end].to_vec()],
            report: hsrecon::opt::OptimizeReport {
                history: Vec::new(),
                aborted: None,
            },
            segment: seg,
        })
        .collect();
    let rec = pipeline::stitch_segments(&solutions).unwrap();
    assert_eq!(rec.poses.len(), 230);
    for (a, b) in rec.poses.iter().zip(&poses) {
        assert!((a.translation - b.translation).norm() < 1e-9);
        assert!((a.rotation - b.rotation).norm() < 1e-9);
    }
    println!("criterion 8 (bit-identical reruns, bundle identity, split/stitch identity): pass");
}

// ---------------------------------------------------------------------------
// criterion 9: default configuration snapshot

#[test]
fn criterion_9_default_configuration_snapshot() {
    let s1 = StageConfig::stage1_default();
    assert_eq!(s1.iterations, 500);
    assert_eq!(s1.learning_rate, 0.07);
    assert_eq!(s1.w_3d, 1.0);
    assert_eq!(s1.w_2d, 0.0);
    assert!(s1.optimize_pose && s1.optimize_t_c && s1.optimize_sigma);
    assert!(!s1.optimize_depth && !s1.optimize_intrinsics);

    let s2 = StageConfig::stage2_default();
    assert_eq!(s2.iterations, 200);
    assert_eq!(s2.learning_rate, 0.014);
    assert_eq!(s2.w_3d, 0.0);
    assert_eq!(s2.w_2d, 1.0);
    assert!(s2.optimize_pose && s2.optimize_t_c && s2.optimize_sigma);
    assert!(s2.optimize_depth && s2.optimize_intrinsics);

    let l = LossConfig::default();
    assert_eq!(l.w_c1, 1.0);
    assert_eq!(l.w_c2, 20.0);
    assert_eq!(l.w_p, 10.0);
    assert_eq!(l.delta_c1, 0.0);
    assert_eq!(l.delta_c2, 0.1);
    assert_eq!(l.robust_3d, RobustKernel::Huber { delta: 0.1 });
    assert_eq!(l.robust_2d, RobustKernel::Huber { delta: 5.0 });

    let p = PipelineConfig::default();
    assert_eq!(p.segment_length, 100);
    assert_eq!(p.keyframe_interval_s, 0.2);
    assert_eq!(p.stage1, s1);
    assert_eq!(p.stage2, s2);
    assert_eq!(p.loss, l);
    println!("criterion 9 (configuration snapshot matches published defaults): pass");
}
