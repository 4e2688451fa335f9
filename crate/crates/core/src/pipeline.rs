//! Sequence-level orchestration: segmentation, keyframing, per-segment
//! optimization, interpolation, stitching, and trajectory chaining.
//!
//! Long sequences are split into fixed-length segments sharing one
//! overlap frame. Each segment is optimized independently over its
//! keyframes, in-between frames are interpolated, and segments are then
//! re-anchored left-to-right so the overlap-frame cameras coincide.
//! Body transforms are camera-frame quantities and ride along unchanged.

use nalgebra::Vector3;

use crate::contact::ContactSearch;
use crate::geom::{interpolate, DepthMap, Intrinsics, RigidTransform};
use crate::human::BodySequence;
use crate::opt::{
    run_two_stage, CorrectionField, FrameParams, LossConfig, OptimizeReport, PersonParams,
    Problem, StageConfig,
};
use crate::par;
use crate::scene::{ForegroundMask, MatchSet};
use crate::{Error, Result};

/// Inclusive frame range of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Contiguous cover with one shared frame between adjacent segments:
/// 250 frames at length 100 give [0,99], [99,198], [198,249].
pub fn split_segments(frame_count: usize, segment_length: usize) -> Vec<Segment> {
    assert!(frame_count >= 1 && segment_length >= 2 || frame_count == 1);
    if frame_count == 1 {
        return vec![Segment { start: 0, end: 0 }];
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + segment_length - 1).min(frame_count - 1);
        out.push(Segment { start, end });
        if end == frame_count - 1 {
            return out;
        }
        start = end;
    }
}

/// Keyframes at `start + floor(k * interval_s * fps)`, always including
/// both segment endpoints.
pub fn sample_keyframes(segment: &Segment, fps: f64, interval_s: f64) -> Vec<usize> {
    assert!(fps > 0.0 && interval_s > 0.0);
    let step = interval_s * fps;
    let mut ids: Vec<usize> = if step <= 1.0 {
        (segment.start..=segment.end).collect()
    } else {
        let mut v = Vec::new();
        let mut k = 0usize;
        loop {
            let id = segment.start + (k as f64 * step).floor() as usize;
            if id >= segment.end {
                break;
            }
            v.push(id);
            k += 1;
        }
        v.push(segment.end);
        v
    };
    ids.dedup();
    ids
}

/// Slerp+lerp camera poses from keyframes to arbitrary bracketed frames.
pub fn interpolate_cameras(
    keyframes: &[usize],
    poses: &[RigidTransform],
    targets: &[usize],
) -> Result<Vec<RigidTransform>> {
    if keyframes.len() != poses.len() {
        return Err(Error::LengthMismatch {
            context: "keyframe poses",
            a: keyframes.len(),
            b: poses.len(),
        });
    }
    targets
        .iter()
        .map(|&t| {
            let i = match keyframes.binary_search(&t) {
                Ok(i) => return Ok(poses[i]),
                Err(i) => i,
            };
            if i == 0 || i == keyframes.len() {
                return Err(Error::OutOfRange {
                    value: t as f64,
                    lo: *keyframes.first().unwrap_or(&0) as f64,
                    hi: *keyframes.last().unwrap_or(&0) as f64,
                });
            }
            let (a, b) = (keyframes[i - 1], keyframes[i]);
            let s = (t - a) as f64 / (b - a) as f64;
            interpolate(&poses[i - 1], &poses[i], s)
        })
        .collect()
}

/// Anchor the world to the first camera and compose per-gap increments:
/// T_g^1 = T_c^1, T_g^t = dT^{t-1} ... dT^1 T_c^1.
pub fn chain_trajectory(t_c_1: &RigidTransform, deltas: &[RigidTransform]) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(deltas.len() + 1);
    let mut acc = *t_c_1;
    out.push(acc);
    for d in deltas {
        acc = d.compose(&acc);
        out.push(acc);
    }
    out
}

/// Recover camera extrinsics from global and camera-frame body
/// transforms: P^t = T_g^t (T_c^t)^-1.
pub fn camera_from_chain(
    t_g: &[RigidTransform],
    t_c: &[RigidTransform],
) -> Result<Vec<RigidTransform>> {
    if t_g.len() != t_c.len() {
        return Err(Error::IndexMismatch {
            context: "chained trajectory",
            a: t_g.len(),
            b: t_c.len(),
        });
    }
    Ok(t_g
        .iter()
        .zip(t_c)
        .map(|(g, c)| g.compose(&c.inverse()))
        .collect())
}

/// Median over frames of (metric body depth / predicted pre-scale depth).
pub fn median_scale_baseline(body_depths: &[f64], predicted_depths: &[f64]) -> Result<f64> {
    let mut ratios: Vec<f64> = body_depths
        .iter()
        .zip(predicted_depths)
        .filter(|(&b, &p)| b > 0.0 && p > 0.0 && b.is_finite() && p.is_finite())
        .map(|(&b, &p)| b / p)
        .collect();
    if ratios.is_empty() {
        return Err(Error::NoValidFrames);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = ratios.len();
    Ok(if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    })
}

// ---------------------------------------------------------------------------
// full reconstruction

/// Scene-side initialization of one frame.
#[derive(Debug, Clone)]
pub struct FrameState {
    pub pose: RigidTransform,
    pub sigma: f64,
    /// Pre-scale, foreground-trimmed depth.
    pub depth: DepthMap,
    pub mask: ForegroundMask,
}

/// Everything the optimizer consumes for one sequence. Match edges use
/// global frame ids.
#[derive(Debug, Clone)]
pub struct SequenceInput {
    pub intrinsics: Intrinsics,
    pub fps: f64,
    pub frames: Vec<FrameState>,
    pub people: Vec<BodySequence>,
    pub matches: Vec<MatchSet>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub segment_length: usize,
    pub keyframe_interval_s: f64,
    /// Keyframe pairs up to this many keyframes apart form match edges.
    pub window: usize,
    /// Depth-correction downsampling per side.
    pub depth_down: usize,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub loss: LossConfig,
    pub search: ContactSearch,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segment_length: 100,
            keyframe_interval_s: 0.2,
            window: 3,
            depth_down: 4,
            stage1: StageConfig::stage1_default(),
            stage2: StageConfig::stage2_default(),
            loss: LossConfig::default(),
            search: ContactSearch::default(),
            seed: 0,
        }
    }
}

/// Keyframe pairs (global ids) that should carry matches, segment by
/// segment within the keyframe window.
pub fn match_pairs(frame_count: usize, fps: f64, cfg: &PipelineConfig) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for seg in split_segments(frame_count, cfg.segment_length) {
        let kfs = sample_keyframes(&seg, fps, cfg.keyframe_interval_s);
        for a in 0..kfs.len() {
            for b in a + 1..(a + 1 + cfg.window).min(kfs.len()) {
                pairs.push((kfs[a], kfs[b]));
            }
        }
    }
    pairs
}

/// One segment's optimized, fully interpolated result.
#[derive(Debug, Clone)]
pub struct SegmentSolution {
    pub segment: Segment,
    pub keyframes: Vec<usize>,
    /// Possibly optimized intrinsics; segments may disagree slightly and
    /// stitching keeps the first segment's.
    pub intrinsics: Intrinsics,
    /// Per frame of the segment, inclusive.
    pub poses: Vec<RigidTransform>,
    pub sigmas: Vec<f64>,
    /// Pre-scale depths; corrected at keyframes, initial elsewhere.
    pub depths: Vec<DepthMap>,
    /// Per person, per frame of the segment.
    pub t_c: Vec<Vec<RigidTransform>>,
    pub report: OptimizeReport,
}

/// Globally stitched sequence result.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub intrinsics: Intrinsics,
    pub poses: Vec<RigidTransform>,
    pub sigmas: Vec<f64>,
    pub depths: Vec<DepthMap>,
    /// Per person, per frame.
    pub t_c: Vec<Vec<RigidTransform>>,
    /// |log sigma| disagreement at each segment junction.
    pub scale_gaps: Vec<f64>,
}

fn build_problem(input: &SequenceInput, keyframes: &[usize], cfg: &PipelineConfig) -> Problem {
    let frames: Vec<FrameParams> = keyframes
        .iter()
        .map(|&t| {
            let f = &input.frames[t];
            FrameParams {
                frame_id: t,
                pose: f.pose,
                log_sigma: f.sigma.ln(),
                depth: f.depth.clone(),
                mask: f.mask.clone(),
                correction: CorrectionField::new(f.depth.width, f.depth.height, cfg.depth_down),
            }
        })
        .collect();
    let local: std::collections::HashMap<usize, usize> = keyframes
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, i))
        .collect();
    let matches: Vec<MatchSet> = input
        .matches
        .iter()
        .filter_map(|s| {
            let (&i, &j) = (local.get(&s.edge.0)?, local.get(&s.edge.1)?);
            Some(MatchSet {
                edge: (i, j),
                entries: s.entries.clone(),
            })
        })
        .collect();
    let persons: Vec<PersonParams> = input
        .people
        .iter()
        .map(|seq| PersonParams {
            person_id: seq.frames.first().map_or(0, |b| b.person_id),
            bodies: keyframes.iter().map(|&t| seq.frames[t].clone()).collect(),
            t_c: keyframes.iter().map(|&t| seq.frames[t].t_c).collect(),
        })
        .collect();
    Problem {
        intrinsics: input.intrinsics,
        frames,
        persons,
        matches,
        links: Vec::new(),
        persistent: Vec::new(),
    }
}

fn interpolate_scalar_log(keyframes: &[usize], values: &[f64], t: usize) -> f64 {
    match keyframes.binary_search(&t) {
        Ok(i) => values[i],
        Err(i) => {
            let (a, b) = (keyframes[i - 1], keyframes[i]);
            let s = (t - a) as f64 / (b - a) as f64;
            (values[i - 1].ln() * (1.0 - s) + values[i].ln() * s).exp()
        }
    }
}

fn optimize_segment(
    input: &SequenceInput,
    segment: Segment,
    cfg: &PipelineConfig,
) -> Result<SegmentSolution> {
    let keyframes = sample_keyframes(&segment, input.fps, cfg.keyframe_interval_s);

    // with nothing to optimize the initialization passes through untouched,
    // including non-keyframe poses that interpolation would otherwise replace
    if cfg.stage1.iterations == 0 && cfg.stage2.iterations == 0 {
        let targets = segment.start..=segment.end;
        return Ok(SegmentSolution {
            segment,
            intrinsics: input.intrinsics,
            poses: targets.clone().map(|t| input.frames[t].pose).collect(),
            sigmas: targets.clone().map(|t| input.frames[t].sigma).collect(),
            depths: targets.clone().map(|t| input.frames[t].depth.clone()).collect(),
            t_c: input
                .people
                .iter()
                .map(|seq| targets.clone().map(|t| seq.frames[t].t_c).collect())
                .collect(),
            keyframes,
            report: OptimizeReport {
                history: Vec::new(),
                aborted: None,
            },
        });
    }

    let mut problem = build_problem(input, &keyframes, cfg);
    let report = run_two_stage(
        &mut problem,
        &cfg.stage1,
        &cfg.stage2,
        &cfg.loss,
        &cfg.search,
        cfg.seed,
    );

    let kf_poses: Vec<RigidTransform> = problem.frames.iter().map(|f| f.pose).collect();
    let kf_sigmas: Vec<f64> = problem.frames.iter().map(|f| f.sigma()).collect();
    let targets: Vec<usize> = (segment.start..=segment.end).collect();
    let poses = interpolate_cameras(&keyframes, &kf_poses, &targets)?;
    let sigmas: Vec<f64> = targets
        .iter()
        .map(|&t| interpolate_scalar_log(&keyframes, &kf_sigmas, t))
        .collect();
    let depths: Vec<DepthMap> = targets
        .iter()
        .map(|&t| match keyframes.binary_search(&t) {
            Ok(i) => problem.frames[i].corrected_depth(),
            Err(_) => input.frames[t].depth.clone(),
        })
        .collect();
    let t_c: Vec<Vec<RigidTransform>> = problem
        .persons
        .iter()
        .map(|per| {
            targets
                .iter()
                .map(|&t| match keyframes.binary_search(&t) {
                    Ok(i) => Ok(per.t_c[i]),
                    Err(i) => {
                        let (a, b) = (keyframes[i - 1], keyframes[i]);
                        let s = (t - a) as f64 / (b - a) as f64;
                        interpolate(&per.t_c[i - 1], &per.t_c[i], s)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SegmentSolution {
        segment,
        keyframes,
        intrinsics: problem.intrinsics,
        poses,
        sigmas,
        depths,
        t_c,
        report,
    })
}

/// Rigidly re-anchor each segment onto its predecessor at the shared
/// overlap frame; earlier segments win on the overlap frame itself.
pub fn stitch_segments(segments: &[SegmentSolution]) -> Result<Reconstruction> {
    let first = segments.first().ok_or(Error::NoValidFrames)?;
    let frame_count = segments.last().unwrap().segment.end + 1;
    let person_count = first.t_c.len();
    let mut poses: Vec<RigidTransform> = Vec::with_capacity(frame_count);
    let mut sigmas: Vec<f64> = Vec::with_capacity(frame_count);
    let mut depths = Vec::with_capacity(frame_count);
    let mut t_c = vec![Vec::with_capacity(frame_count); person_count];
    let mut scale_gaps = Vec::new();
    let mut g = RigidTransform::identity();

    for (k, seg) in segments.iter().enumerate() {
        let skip = if k == 0 {
            0
        } else {
            let prev = &segments[k - 1];
            if seg.segment.start != prev.segment.end {
                return Err(Error::MissingOverlap {
                    left: prev.segment.end,
                    right: seg.segment.start,
                });
            }
            // anchor this segment's overlap camera onto the stitched one
            let anchored_prev = poses[prev.segment.end];
            g = anchored_prev.compose(&seg.poses[0].inverse());
            scale_gaps.push((sigmas[prev.segment.end].ln() - seg.sigmas[0].ln()).abs());
            1
        };
        for i in skip..seg.poses.len() {
            poses.push(g.compose(&seg.poses[i]));
            sigmas.push(seg.sigmas[i]);
            depths.push(seg.depths[i].clone());
            for (p, person) in seg.t_c.iter().enumerate() {
                t_c[p].push(person[i]);
            }
        }
    }

    Ok(Reconstruction {
        intrinsics: first.intrinsics,
        poses,
        sigmas,
        depths,
        t_c,
        scale_gaps,
    })
}

/// Full pipeline: split, keyframe, optimize each segment (in parallel),
/// interpolate, stitch.
pub fn reconstruct(
    input: &SequenceInput,
    cfg: &PipelineConfig,
) -> Result<(Reconstruction, Vec<OptimizeReport>)> {
    let n = input.frames.len();
    if n == 0 {
        return Err(Error::NoValidFrames);
    }
    for seq in &input.people {
        if seq.frames.len() != n {
            return Err(Error::LengthMismatch {
                context: "body sequence length",
                a: seq.frames.len(),
                b: n,
            });
        }
    }
    let segments = split_segments(n, cfg.segment_length);
    let solved: Vec<Result<SegmentSolution>> =
        par::map_slice(&segments, |&seg| optimize_segment(input, seg, cfg));
    let mut solutions = Vec::with_capacity(solved.len());
    for s in solved {
        solutions.push(s?);
    }
    let reports = solutions.iter().map(|s| s.report.clone()).collect();
    let rec = stitch_segments(&solutions)?;
    Ok((rec, reports))
}

/// Camera centers of a trajectory.
pub fn camera_centers(poses: &[RigidTransform]) -> Vec<Vector3<f64>> {
    poses.iter().map(|p| p.translation).collect()
}
