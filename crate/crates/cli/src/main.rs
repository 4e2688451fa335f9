//! `hsrecon` command line: synthetic data generation, joint human-scene
//! optimization, metric evaluation, trajectory chaining and exports.
//!
//! Exit codes: 0 success, 2 validation failure (bad flags, malformed or
//! inconsistent inputs), 3 numerical failure (non-finite loss, degenerate
//! geometry).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use nalgebra::{Rotation3, UnitQuaternion, Vector3};

use hsrecon::bundle::{load_bundle, read_blob_f64, read_blob_u8, save_bundle, write_blob_u8, Bundle};
use hsrecon::contact::ContactSearch;
use hsrecon::eval::{self, AlignMode, MetricReport};
use hsrecon::geom::RigidTransform;
use hsrecon::opt::{LossConfig, OptimizeReport, RobustKernel, StageConfig};
use hsrecon::pipeline::{self, FrameState, PipelineConfig, SequenceInput};
use hsrecon::synth::{self, NoiseSpec, ScenarioSpec};
use hsrecon::Error as CoreError;

/// Point-cloud subsampling used by both `optimize` and `eval` so their
/// chamfer numbers agree bit-for-bit.
const CLOUD_STRIDE: usize = 7;

#[derive(Parser)]
#[command(name = "hsrecon", version, about = "Joint human-scene reconstruction at metric scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth bundle plus a perturbed initialization.
    Synth(SynthArgs),
    /// Optimize a bundle: segment, keyframe, two-stage descent, stitch.
    Optimize(OptimizeArgs),
    /// Score a predicted bundle against a ground-truth bundle.
    Eval(EvalArgs),
    /// Compose relative camera-frame transforms into a TUM trajectory.
    Chain(ChainArgs),
    /// Export a bundle as an ASCII PLY cloud or a TUM trajectory.
    Export(ExportArgs),
    /// Convert upstream outputs (float contact probabilities) into a bundle.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; receives `gt/` and `init/` bundles.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    frame_count: usize,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 60.0)]
    focal: f64,
    /// True metric scale of the pre-scale depth maps.
    #[arg(long, default_value_t = 2.0)]
    sigma_star: f64,
    #[arg(long, default_value_t = 1)]
    persons: usize,
    #[arg(long, default_value_t = 0.4)]
    step_length: f64,
    #[arg(long, default_value_t = 10)]
    step_frames: usize,
    #[arg(long, default_value_t = 0.05)]
    lift_height: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    // initialization corruption
    #[arg(long, default_value_t = 0.0)]
    depth_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    match_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pose_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    t_c_noise: f64,
    /// Assumed scale of the initialization.
    #[arg(long, default_value_t = 1.0)]
    sigma_init: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    contact_flip: f64,
    /// Injected foot slide, meters per frame.
    #[arg(long, default_value_t = 0.0)]
    slide: f64,
    #[arg(long, default_value_t = 60)]
    matches_per_edge: usize,
}

#[derive(Args, Clone)]
struct PipelineFlags {
    #[arg(long, default_value_t = 100)]
    segment_length: usize,
    /// Keyframe spacing in seconds.
    #[arg(long, default_value_t = 0.2)]
    keyframe_interval: f64,
    /// Keyframe pairs up to this many apart form match edges.
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// Depth-correction downsampling per side.
    #[arg(long, default_value_t = 4)]
    depth_down: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12.0)]
    max_px: f64,
    #[arg(long, default_value_t = 0)]
    visibility_dilation: usize,
    // loss weights
    #[arg(long, default_value_t = 1.0)]
    w_3d: f64,
    #[arg(long, default_value_t = 1.0)]
    w_2d: f64,
    #[arg(long, default_value_t = 1.0)]
    w_c1: f64,
    #[arg(long, default_value_t = 20.0)]
    w_c2: f64,
    #[arg(long, default_value_t = 10.0)]
    w_p: f64,
    #[arg(long, default_value_t = 0.0)]
    delta_c1: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_c2: f64,
    /// Huber width of the 3D term, meters.
    #[arg(long, default_value_t = 0.1)]
    huber_3d: f64,
    /// Huber width of the 2D term, pixels.
    #[arg(long, default_value_t = 5.0)]
    huber_2d: f64,
    // stage 1
    #[arg(long, default_value_t = 500)]
    stage1_iters: usize,
    #[arg(long, default_value_t = 0.07)]
    stage1_lr: f64,
    #[arg(long, default_value_t = 1.0)]
    stage1_w_3d: f64,
    #[arg(long, default_value_t = 0.0)]
    stage1_w_2d: f64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage1_opt_pose: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage1_opt_t_c: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage1_opt_sigma: bool,
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    stage1_opt_depth: bool,
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    stage1_opt_intrinsics: bool,
    // stage 2
    #[arg(long, default_value_t = 200)]
    stage2_iters: usize,
    #[arg(long, default_value_t = 0.014)]
    stage2_lr: f64,
    #[arg(long, default_value_t = 0.0)]
    stage2_w_3d: f64,
    #[arg(long, default_value_t = 1.0)]
    stage2_w_2d: f64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage2_opt_pose: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage2_opt_t_c: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage2_opt_sigma: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage2_opt_depth: bool,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    stage2_opt_intrinsics: bool,
}

impl PipelineFlags {
    fn to_config(&self) -> PipelineConfig {
        let seed = std::env::var("HSRECON_SEED")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(self.seed);
        PipelineConfig {
            segment_length: self.segment_length,
            keyframe_interval_s: self.keyframe_interval,
            window: self.window,
            depth_down: self.depth_down,
            stage1: StageConfig {
                iterations: self.stage1_iters,
                learning_rate: self.stage1_lr,
                w_3d: self.stage1_w_3d,
                w_2d: self.stage1_w_2d,
                optimize_pose: self.stage1_opt_pose,
                optimize_t_c: self.stage1_opt_t_c,
                optimize_sigma: self.stage1_opt_sigma,
                optimize_depth: self.stage1_opt_depth,
                optimize_intrinsics: self.stage1_opt_intrinsics,
            },
            stage2: StageConfig {
                iterations: self.stage2_iters,
                learning_rate: self.stage2_lr,
                w_3d: self.stage2_w_3d,
                w_2d: self.stage2_w_2d,
                optimize_pose: self.stage2_opt_pose,
                optimize_t_c: self.stage2_opt_t_c,
                optimize_sigma: self.stage2_opt_sigma,
                optimize_depth: self.stage2_opt_depth,
                optimize_intrinsics: self.stage2_opt_intrinsics,
            },
            loss: LossConfig {
                w_3d: self.w_3d,
                w_2d: self.w_2d,
                w_c1: self.w_c1,
                w_c2: self.w_c2,
                w_p: self.w_p,
                delta_c1: self.delta_c1,
                delta_c2: self.delta_c2,
                robust_3d: RobustKernel::Huber { delta: self.huber_3d },
                robust_2d: RobustKernel::Huber { delta: self.huber_2d },
            },
            search: ContactSearch {
                max_px: self.max_px,
                visibility_dilation_px: self.visibility_dilation,
            },
            seed,
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    /// Input bundle directory.
    #[arg(long)]
    bundle: PathBuf,
    /// Output directory; receives the result bundle plus exports.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted bundle directory.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth bundle directory.
    #[arg(long)]
    gt: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChainArgs {
    /// Text file: 12 numbers per line (row-major rotation, translation);
    /// the first line is the initial transform, the rest are per-frame deltas.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    fps: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `cloud` (ASCII PLY), `camera` or `root` (TUM).
    #[arg(long)]
    what: String,
    /// Person index for `root`.
    #[arg(long, default_value_t = 0)]
    person: usize,
    /// Keep every n-th valid depth pixel in `cloud`.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args)]
struct ConvertArgs {
    /// Bundle-shaped directory whose contact blobs hold f64 probabilities.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    contact_threshold: f64,
}

// ---------------------------------------------------------------------------
// small io helpers

fn atomic_write(path: &Path, bytes: &[u8]) -> hsrecon::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CoreError {
    CoreError::ParseError {
        path: path.display().to_string(),
        reason: source.to_string(),
    }
}

fn quaternion_of(t: &RigidTransform) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(t.rotation));
    let q = q.into_inner().normalize();
    [q.i, q.j, q.k, q.w]
}

fn tum_lines(poses: &[(f64, RigidTransform)]) -> String {
    let mut out = String::new();
    for (ts, p) in poses {
        let [qx, qy, qz, qw] = quaternion_of(p);
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            ts, p.translation.x, p.translation.y, p.translation.z, qx, qy, qz, qw
        ));
    }
    out
}

fn ply_text(points: &[Vector3<f64>]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", points.len()));
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

/// Metric world cloud of a sequence, every `stride`-th valid pixel.
fn world_cloud(input: &SequenceInput, stride: usize) -> Vec<Vector3<f64>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for f in &input.frames {
        let mut n = 0usize;
        for v in 0..f.depth.height {
            for u in 0..f.depth.width {
                let i = f.depth.idx(u, v);
                if !f.depth.valid[i] {
                    continue;
                }
                if n % stride == 0 {
                    let q = input.intrinsics.ray(u as f64, v as f64) * (f.depth.values[i] * f.sigma);
                    out.push(f.pose.apply(q));
                }
                n += 1;
            }
        }
    }
    out
}

/// World root-joint trajectory of one person.
fn root_trajectory(input: &SequenceInput, person: usize) -> Vec<Vector3<f64>> {
    input.people[person]
        .frames
        .iter()
        .zip(&input.frames)
        .map(|(bf, fr)| fr.pose.compose(&bf.t_c).apply(bf.joints[0]))
        .collect()
}

fn world_joints(input: &SequenceInput, person: usize) -> Vec<Vec<Vector3<f64>>> {
    input.people[person]
        .frames
        .iter()
        .zip(&input.frames)
        .map(|(bf, fr)| {
            let t_g = fr.pose.compose(&bf.t_c);
            bf.joints.iter().map(|&j| t_g.apply(j)).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// metric report shared by `optimize` and `eval`

fn compute_report(pred: &SequenceInput, gt: &SequenceInput) -> hsrecon::Result<MetricReport> {
    if pred.frames.len() != gt.frames.len() {
        return Err(CoreError::LengthMismatch {
            context: "prediction vs ground-truth frame count",
            a: pred.frames.len(),
            b: gt.frames.len(),
        });
    }
    let mut report = MetricReport::default();

    let persons = pred.people.len().min(gt.people.len());
    if persons > 0 {
        let (mut wa, mut w, mut rte) = (0.0, 0.0, 0.0);
        for p in 0..persons {
            let pj = world_joints(pred, p);
            let gj = world_joints(gt, p);
            wa += eval::mpjpe_100(&pj, &gj, AlignMode::Full)?;
            w += eval::mpjpe_100(&pj, &gj, AlignMode::FirstTwoFrames)?;
            rte += eval::rte(&root_trajectory(pred, p), &root_trajectory(gt, p))?;
        }
        report.wa_mpjpe_100_mm = Some(wa / persons as f64);
        report.w_mpjpe_100_mm = Some(w / persons as f64);
        report.rte_percent = Some(rte / persons as f64);
    }

    let pred_poses: Vec<RigidTransform> = pred.frames.iter().map(|f| f.pose).collect();
    let gt_poses: Vec<RigidTransform> = gt.frames.iter().map(|f| f.pose).collect();
    report.ate_m = Some(eval::ate(&pred_poses, &gt_poses)?);

    let scene_known = gt.frames.iter().any(|f| f.depth.valid_count() > 0);
    if scene_known {
        let scale = |f: &FrameState| {
            let mut d = f.depth.clone();
            for z in &mut d.values {
                *z *= f.sigma;
            }
            d
        };
        let pd: Vec<_> = pred.frames.iter().map(scale).collect();
        let gd: Vec<_> = gt.frames.iter().map(scale).collect();
        let (abs_rel, delta) = eval::depth_metrics(&pd, &gd)?;
        report.abs_rel = Some(abs_rel);
        report.delta_125 = Some(delta);

        let gt_cloud = world_cloud(gt, CLOUD_STRIDE);
        let mut pred_cloud = world_cloud(pred, CLOUD_STRIDE);
        // the prediction lives in its own gauge; anchor it to the ground
        // truth through the camera trajectory before comparing clouds
        let centers_p: Vec<Vector3<f64>> = pred_poses.iter().map(|p| p.translation).collect();
        let centers_g: Vec<Vector3<f64>> = gt_poses.iter().map(|p| p.translation).collect();
        if let Ok(align) = eval::rigid_align(&centers_p, &centers_g) {
            for q in &mut pred_cloud {
                *q = align.apply(*q);
            }
        }
        report.chamfer_m = Some(eval::chamfer(&pred_cloud, &gt_cloud)?);
    }

    let n = pred.frames.len() as f64;
    report.scale_error_percent = Some(
        pred.frames
            .iter()
            .zip(&gt.frames)
            .map(|(a, b)| (a.sigma / b.sigma - 1.0).abs() * 100.0)
            .sum::<f64>()
            / n,
    );
    Ok(report)
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_synth(a: &SynthArgs) -> hsrecon::Result<()> {
    let seed = std::env::var("HSRECON_SEED")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(a.seed);
    let spec = ScenarioSpec {
        frame_count: a.frame_count,
        fps: a.fps,
        width: a.width,
        height: a.height,
        focal: a.focal,
        sigma_star: a.sigma_star,
        person_count: a.persons,
        step_length: a.step_length,
        step_frames: a.step_frames,
        lift_height: a.lift_height,
        seed,
    };
    let noise = NoiseSpec {
        depth_noise_std: a.depth_noise,
        match_noise_std: a.match_noise,
        match_outlier_fraction: a.outlier_fraction,
        pose_noise_std: a.pose_noise,
        t_c_noise_std: a.t_c_noise,
        sigma_init: a.sigma_init,
        sigma_noise_std: a.sigma_noise,
        contact_flip_rate: a.contact_flip,
        slide_per_frame: a.slide,
    };
    let sc = synth::generate_scenario(&spec);
    let init = synth::perturb_initialization(&sc, &noise);
    let pairs = pipeline::match_pairs(spec.frame_count, spec.fps, &PipelineConfig::default());
    let matches = synth::make_matches(&sc, &noise, &pairs, a.matches_per_edge);

    let gt = Bundle {
        input: SequenceInput {
            intrinsics: sc.intrinsics,
            fps: spec.fps,
            frames: sc
                .frames
                .iter()
                .map(|f| FrameState {
                    pose: f.pose,
                    sigma: spec.sigma_star,
                    depth: f.depth.clone(),
                    mask: f.mask.clone(),
                })
                .collect(),
            people: sc.people.clone(),
            matches: Vec::new(),
        },
        ground_truth: None,
    };
    save_bundle(&a.out.join("gt"), &gt)?;

    let init_bundle = Bundle {
        input: SequenceInput {
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
        },
        ground_truth: Some(PathBuf::from("../gt")),
    };
    save_bundle(&a.out.join("init"), &init_bundle)
}

fn cmd_optimize(a: &OptimizeArgs) -> hsrecon::Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let cfg = a.flags.to_config();
    let (rec, reports) = pipeline::reconstruct(&bundle.input, &cfg)?;

    let mut out_input = bundle.input.clone();
    out_input.intrinsics = rec.intrinsics;
    for (t, f) in out_input.frames.iter_mut().enumerate() {
        f.pose = rec.poses[t];
        f.sigma = rec.sigmas[t];
        f.depth = rec.depths[t].clone();
    }
    for (p, seq) in out_input.people.iter_mut().enumerate() {
        for (t, bf) in seq.frames.iter_mut().enumerate() {
            bf.t_c = rec.t_c[p][t];
        }
    }

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let result = Bundle {
        input: out_input.clone(),
        ground_truth: bundle
            .ground_truth
            .as_ref()
            .map(|g| if g.is_relative() { a.bundle.join(g) } else { g.clone() }),
    };
    save_bundle(&a.out.join("bundle"), &result)?;

    atomic_write(
        &a.out.join("cloud.ply"),
        ply_text(&world_cloud(&out_input, CLOUD_STRIDE)).as_bytes(),
    )?;
    let fps = out_input.fps;
    let cam: Vec<(f64, RigidTransform)> = out_input
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| (t as f64 / fps, f.pose))
        .collect();
    atomic_write(&a.out.join("camera.tum"), tum_lines(&cam).as_bytes())?;
    for (p, seq) in out_input.people.iter().enumerate() {
        let traj: Vec<(f64, RigidTransform)> = seq
            .frames
            .iter()
            .zip(&out_input.frames)
            .enumerate()
            .map(|(t, (bf, fr))| (t as f64 / fps, fr.pose.compose(&bf.t_c)))
            .collect();
        atomic_write(
            &a.out.join(format!("root_{:03}.tum", p)),
            tum_lines(&traj).as_bytes(),
        )?;
    }

    let mut history = String::new();
    for (seg, report) in reports.iter().enumerate() {
        push_history(&mut history, seg, report);
    }
    atomic_write(&a.out.join("history.jsonl"), history.as_bytes())?;

    if let Some(gt_path) = &result.ground_truth {
        let gt = load_bundle(gt_path)?;
        let report = compute_report(&out_input, &gt.input)?;
        atomic_write(&a.out.join("metrics.txt"), report.to_text().as_bytes())?;
        print!("{}", report.to_text());
    }
    Ok(())
}

fn push_history(out: &mut String, segment: usize, report: &OptimizeReport) {
    for rec in &report.history {
        let mut v = serde_json::to_value(rec).expect("record serializes");
        v.as_object_mut()
            .unwrap()
            .insert("segment".into(), segment.into());
        out.push_str(&v.to_string());
        out.push('\n');
    }
}

fn cmd_eval(a: &EvalArgs) -> hsrecon::Result<()> {
    let pred = load_bundle(&a.pred)?;
    let gt = load_bundle(&a.gt)?;
    let report = compute_report(&pred.input, &gt.input)?;
    let text = report.to_text();
    match &a.out {
        Some(path) => atomic_write(path, text.as_bytes())?,
        None => print!("{}", text),
    }
    Ok(())
}

fn cmd_chain(a: &ChainArgs) -> hsrecon::Result<()> {
    let text = fs::read_to_string(&a.input).map_err(|e| io_err(&a.input, e))?;
    let mut rows: Vec<RigidTransform> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::ParseError {
                path: a.input.display().to_string(),
                reason: format!("line {}: {}", lineno + 1, e),
            })?;
        if nums.len() != 12 {
            return Err(CoreError::ParseError {
                path: a.input.display().to_string(),
                reason: format!("line {}: expected 12 numbers, got {}", lineno + 1, nums.len()),
            });
        }
        let mut rot = nalgebra::Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rot[(r, c)] = nums[r * 3 + c];
            }
        }
        rows.push(RigidTransform::new(rot, Vector3::new(nums[9], nums[10], nums[11])));
    }
    let Some((first, deltas)) = rows.split_first() else {
        return Err(CoreError::ParseError {
            path: a.input.display().to_string(),
            reason: "no transforms in file".into(),
        });
    };
    let chained = pipeline::chain_trajectory(first, deltas);
    let stamped: Vec<(f64, RigidTransform)> = chained
        .iter()
        .enumerate()
        .map(|(t, p)| (t as f64 / a.fps, *p))
        .collect();
    atomic_write(&a.out, tum_lines(&stamped).as_bytes())
}

fn cmd_export(a: &ExportArgs) -> hsrecon::Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let input = &bundle.input;
    match a.what.as_str() {
        "cloud" => atomic_write(&a.out, ply_text(&world_cloud(input, a.stride)).as_bytes()),
        "camera" => {
            let traj: Vec<(f64, RigidTransform)> = input
                .frames
                .iter()
                .enumerate()
                .map(|(t, f)| (t as f64 / input.fps, f.pose))
                .collect();
            atomic_write(&a.out, tum_lines(&traj).as_bytes())
        }
        "root" => {
            if a.person >= input.people.len() {
                return Err(CoreError::ParseError {
                    path: a.bundle.display().to_string(),
                    reason: format!("person {} of {} requested", a.person, input.people.len()),
                });
            }
            let traj: Vec<(f64, RigidTransform)> = input.people[a.person]
                .frames
                .iter()
                .zip(&input.frames)
                .enumerate()
                .map(|(t, (bf, fr))| (t as f64 / input.fps, fr.pose.compose(&bf.t_c)))
                .collect();
            atomic_write(&a.out, tum_lines(&traj).as_bytes())
        }
        other => Err(CoreError::ParseError {
            path: "--what".into(),
            reason: format!("unknown export target {:?} (cloud|camera|root)", other),
        }),
    }
}

fn cmd_convert(a: &ConvertArgs) -> hsrecon::Result<()> {
    let mpath = a.input.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| CoreError::ParseError {
        path: mpath.display().to_string(),
        reason: e.to_string(),
    })?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;

    let blob_name = |v: &serde_json::Value, key: &str| -> hsrecon::Result<String> {
        v.get(key)
            .and_then(|s| s.as_str())
            .map(String::from)
            .ok_or_else(|| CoreError::ParseError {
                path: mpath.display().to_string(),
                reason: format!("missing blob reference {:?}", key),
            })
    };
    let copy_blob = |name: &str| -> hsrecon::Result<()> {
        fs::copy(a.input.join(name), a.out.join(name))
            .map(|_| ())
            .map_err(|e| io_err(&a.input.join(name), e))
    };

    for frame in manifest["frames"].as_array().into_iter().flatten() {
        for key in ["depth", "depth_valid", "mask"] {
            copy_blob(&blob_name(frame, key)?)?;
        }
    }
    for person in manifest["people"].as_array().into_iter().flatten() {
        for key in ["vertices", "joints", "t_c"] {
            copy_blob(&blob_name(person, key)?)?;
        }
        let contact = blob_name(person, "contact")?;
        let src = a.input.join(&contact);
        // upstream predictors emit probabilities; already-boolean blobs
        // pass through untouched
        match read_blob_u8(&src) {
            Ok(_) => copy_blob(&contact)?,
            Err(_) => {
                let (dims, probs) = read_blob_f64(&src)?;
                let flags: Vec<u8> = probs
                    .iter()
                    .map(|&p| (p >= a.contact_threshold) as u8)
                    .collect();
                write_blob_u8(&a.out.join(&contact), &dims, &flags)?;
            }
        }
    }
    for m in manifest["matches"].as_array().into_iter().flatten() {
        copy_blob(&blob_name(m, "data")?)?;
    }
    atomic_write(
        &a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("value serializes").as_bytes(),
    )?;
    load_bundle(&a.out).map(|_| ())
}

// ---------------------------------------------------------------------------
// entry

fn exit_code_of(err: &CoreError) -> u8 {
    match err {
        CoreError::NonFiniteLoss { .. }
        | CoreError::AngleAtCut { .. }
        | CoreError::BehindCamera { .. }
        | CoreError::DegenerateConfiguration { .. }
        | CoreError::DegenerateMatches { .. }
        | CoreError::ZeroPathLength
        | CoreError::NoValidPixels => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("HSRECON_THREADS") {
        // rayon reads this when the global pool is first used
        std::env::set_var("RAYON_NUM_THREADS", threads);
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Chain(a) => cmd_chain(a),
        Command::Export(a) => cmd_export(a),
        Command::Convert(a) => cmd_convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let mut stderr = std::io::stderr();
            let _ = writeln!(stderr, "error: {}", err);
            ExitCode::from(exit_code_of(&err))
        }
    }
}
