//! Metric suite: joint error over 100-frame segments, root translation
//! error, absolute trajectory error, depth accuracy, and chamfer
//! distance. All alignments are rigid only; no metric estimates or
//! absorbs scale.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{DepthMap, RigidTransform};
use crate::par;
use crate::{Error, Result};

/// Which frames feed the rigid fit before measuring joint error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignMode {
    /// Fit on the joints of the first two frames only.
    FirstTwoFrames,
    /// Fit on every joint of the segment.
    Full,
}

/// Least-squares rotation+translation mapping `source` onto `target`.
/// No scale is estimated. Degenerate (collinear or near-empty) input is
/// rejected; use the metrics below for trajectories, which tolerate it.
pub fn rigid_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch {
            context: "rigid alignment point sets",
            a: source.len(),
            b: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(Error::DegenerateConfiguration {
            reason: format!("{} points, need at least 3", source.len()),
        });
    }
    let (t, sv) = kabsch(source, target);
    if sv[1] < 1e-12 * sv[0].max(1.0) {
        return Err(Error::DegenerateConfiguration {
            reason: "points are collinear".into(),
        });
    }
    Ok(t)
}

/// Kabsch solution plus the singular values of the cross-covariance,
/// without degeneracy checks.
fn kabsch(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> (RigidTransform, Vector3<f64>) {
    let n = source.len() as f64;
    let cs: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n;
    let ct: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (t - ct) * (s - cs).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    (
        RigidTransform::new(r, ct - r * cs),
        svd.singular_values,
    )
}

/// 100-frame evaluation segments; a trailing remainder shorter than 10
/// frames is merged into the previous segment.
fn eval_segments(frame_count: usize) -> Vec<(usize, usize)> {
    const LEN: usize = 100;
    const MIN_TAIL: usize = 10;
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < frame_count {
        let end = (start + LEN).min(frame_count);
        out.push((start, end));
        start = end;
    }
    if out.len() >= 2 {
        let last = *out.last().unwrap();
        if last.1 - last.0 < MIN_TAIL {
            out.pop();
            out.last_mut().unwrap().1 = last.1;
        }
    }
    out
}

/// Mean per-joint error in millimeters over 100-frame segments, each
/// segment rigidly aligned per `mode` before measuring.
pub fn mpjpe_100(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    mode: AlignMode,
) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            context: "joint frame count",
            a: pred.len(),
            b: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::NoValidFrames);
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                context: "joint count",
                a: p.len(),
                b: g.len(),
            });
        }
    }
    let segments = eval_segments(pred.len());
    let per_segment: Vec<f64> = segments
        .iter()
        .map(|&(a, b)| segment_mpjpe(&pred[a..b], &gt[a..b], mode))
        .collect::<Result<_>>()?;
    Ok(per_segment.iter().sum::<f64>() / per_segment.len() as f64 * 1000.0)
}

fn segment_mpjpe(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    mode: AlignMode,
) -> Result<f64> {
    let fit_frames = match mode {
        AlignMode::FirstTwoFrames => pred.len().min(2),
        AlignMode::Full => pred.len(),
    };
    let src: Vec<Vector3<f64>> = pred[..fit_frames].iter().flatten().copied().collect();
    let dst: Vec<Vector3<f64>> = gt[..fit_frames].iter().flatten().copied().collect();
    let align = rigid_align(&src, &dst)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pf, gf) in pred.iter().zip(gt) {
        for (p, g) in pf.iter().zip(gf) {
            sum += (align.apply(*p) - g).norm();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Root translation error: rigid-align the full trajectories, then mean
/// position error as a percentage of the ground-truth path length.
pub fn rte(pred_root: &[Vector3<f64>], gt_root: &[Vector3<f64>]) -> Result<f64> {
    if pred_root.len() != gt_root.len() {
        return Err(Error::LengthMismatch {
            context: "root trajectory",
            a: pred_root.len(),
            b: gt_root.len(),
        });
    }
    let path: f64 = gt_root.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if path <= 0.0 {
        return Err(Error::ZeroPathLength);
    }
    let (align, _) = kabsch(pred_root, gt_root);
    let mean_err = pred_root
        .iter()
        .zip(gt_root)
        .map(|(p, g)| (align.apply(*p) - g).norm())
        .sum::<f64>()
        / pred_root.len() as f64;
    Ok(mean_err / path * 100.0)
}

/// Absolute trajectory error: RMS camera-center distance after rigid
/// alignment, in meters.
pub fn ate(pred: &[RigidTransform], gt: &[RigidTransform]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            context: "camera trajectory",
            a: pred.len(),
            b: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::NoValidFrames);
    }
    let pc: Vec<Vector3<f64>> = pred.iter().map(|p| p.translation).collect();
    let gc: Vec<Vector3<f64>> = gt.iter().map(|p| p.translation).collect();
    let (align, _) = kabsch(&pc, &gc);
    let mse = pc
        .iter()
        .zip(&gc)
        .map(|(p, g)| (align.apply(*p) - g).norm_squared())
        .sum::<f64>()
        / pc.len() as f64;
    Ok(mse.sqrt())
}

/// AbsRel and the δ<1.25 inlier fraction over the validity intersection
/// of metric depth maps. No scale alignment.
pub fn depth_metrics(pred: &[DepthMap], gt: &[DepthMap]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            context: "depth frame count",
            a: pred.len(),
            b: gt.len(),
        });
    }
    let mut abs_rel = 0.0;
    let mut inliers = 0usize;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if p.values.len() != g.values.len() {
            return Err(Error::LengthMismatch {
                context: "depth map size",
                a: p.values.len(),
                b: g.values.len(),
            });
        }
        for i in 0..p.values.len() {
            if !(p.valid[i] && g.valid[i]) {
                continue;
            }
            let (pv, gv) = (p.values[i], g.values[i]);
            abs_rel += (pv - gv).abs() / gv;
            if (pv / gv).max(gv / pv) < 1.25 {
                inliers += 1;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok((abs_rel / n as f64, inliers as f64 / n as f64))
}

// ---------------------------------------------------------------------------
// chamfer distance

/// Static kd-tree over 3D points for exact nearest-neighbor queries.
pub struct KdTree {
    pts: Vec<Vector3<f64>>,
    // nodes laid out in build order: (point index, axis, left, right)
    nodes: Vec<KdNode>,
    root: Option<usize>,
}

struct KdNode {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn build(pts: &[Vector3<f64>]) -> Self {
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        let mut tree = Self {
            pts: pts.to_vec(),
            nodes: Vec::with_capacity(pts.len()),
            root: None,
        };
        tree.root = tree.build_rec(&mut idx, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            self.pts[a][axis].partial_cmp(&self.pts[b][axis]).unwrap()
        });
        let point = idx[mid];
        let node = self.nodes.len();
        self.nodes.push(KdNode {
            point,
            axis,
            left: None,
            right: None,
        });
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut hi[1..], depth + 1);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    /// Squared distance to the nearest stored point.
    pub fn nearest_sq(&self, q: Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        if let Some(root) = self.root {
            self.search(root, q, &mut best);
        }
        best
    }

    fn search(&self, node: usize, q: Vector3<f64>, best: &mut f64) {
        let n = &self.nodes[node];
        let d = (self.pts[n.point] - q).norm_squared();
        if d < *best {
            *best = d;
        }
        let delta = q[n.axis] - self.pts[n.point][n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        if let Some(c) = far {
            if delta * delta < *best {
                self.search(c, q, best);
            }
        }
    }
}

/// Symmetric mean nearest-neighbor distance between point clouds, in
/// meters. Uses a kd-tree; identical to the brute-force double loop.
pub fn chamfer(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyCloud { which: "pred" });
    }
    if gt.is_empty() {
        return Err(Error::EmptyCloud { which: "gt" });
    }
    let tp = KdTree::build(pred);
    let tg = KdTree::build(gt);
    let d_pg: Vec<f64> = par::map_slice(pred, |&p| tg.nearest_sq(p).sqrt());
    let d_gp: Vec<f64> = par::map_slice(gt, |&g| tp.nearest_sq(g).sqrt());
    let mean_pg = d_pg.iter().sum::<f64>() / pred.len() as f64;
    let mean_gp = d_gp.iter().sum::<f64>() / gt.len() as f64;
    Ok(0.5 * (mean_pg + mean_gp))
}

/// O(n·m) reference used by tests and benchmarks.
pub fn chamfer_brute(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyCloud { which: "pred" });
    }
    if gt.is_empty() {
        return Err(Error::EmptyCloud { which: "gt" });
    }
    let nn = |q: Vector3<f64>, pts: &[Vector3<f64>]| {
        pts.iter()
            .map(|&p| (p - q).norm_squared())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    };
    let mean_pg = pred.iter().map(|&p| nn(p, gt)).sum::<f64>() / pred.len() as f64;
    let mean_gp = gt.iter().map(|&g| nn(g, pred)).sum::<f64>() / gt.len() as f64;
    Ok(0.5 * (mean_pg + mean_gp))
}

// ---------------------------------------------------------------------------
// report

/// All metrics of one evaluation run; absent inputs leave fields unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub wa_mpjpe_100_mm: Option<f64>,
    pub w_mpjpe_100_mm: Option<f64>,
    pub rte_percent: Option<f64>,
    pub ate_m: Option<f64>,
    pub abs_rel: Option<f64>,
    pub delta_125: Option<f64>,
    pub chamfer_m: Option<f64>,
    pub scale_error_percent: Option<f64>,
}

impl MetricReport {
    /// Flat `key value` lines, one metric per line, skipping unset ones.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{} {:.9}\n", k, v));
            }
        };
        put("wa_mpjpe_100_mm", &self.wa_mpjpe_100_mm);
        put("w_mpjpe_100_mm", &self.w_mpjpe_100_mm);
        put("rte_percent", &self.rte_percent);
        put("ate_m", &self.ate_m);
        put("abs_rel", &self.abs_rel);
        put("delta_125", &self.delta_125);
        put("chamfer_m", &self.chamfer_m);
        put("scale_error_percent", &self.scale_error_percent);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::exp_so3;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_points(n: usize, seed: u64, scale: f64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ) * scale
            })
            .collect()
    }

    fn rand_rigid(seed: u64) -> RigidTransform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RigidTransform::new(
            exp_so3(Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )),
            Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ),
        )
    }

    #[test]
    fn rigid_align_recovers_known_transform() {
        let src = rand_points(40, 1, 2.0);
        let g = rand_rigid(2);
        let dst: Vec<_> = src.iter().map(|&p| g.apply(p)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!((est.rotation - g.rotation).norm() < 1e-9);
        assert!((est.translation - g.translation).norm() < 1e-9);

        // identity on identical sets
        let id = rigid_align(&src, &src).unwrap();
        assert!((id.rotation - Matrix3::identity()).norm() < 1e-9);
        assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn rigid_align_does_not_absorb_scale() {
        let src = rand_points(30, 3, 1.0);
        let dst: Vec<_> = src.iter().map(|&p| p * 2.0).collect();
        let est = rigid_align(&src, &dst).unwrap();
        let residual: f64 = src
            .iter()
            .zip(&dst)
            .map(|(s, d)| (est.apply(*s) - d).norm())
            .sum();
        assert!(residual > 1.0, "rigid fit absorbed scale");
    }

    #[test]
    fn rigid_align_rejects_collinear_points() {
        let src: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            rigid_align(&src, &src),
            Err(Error::DegenerateConfiguration { .. })
        ));
    }

    #[test]
    fn eval_segment_boundaries() {
        assert_eq!(eval_segments(100), vec![(0, 100)]);
        assert_eq!(eval_segments(250), vec![(0, 100), (100, 200), (200, 250)]);
        // 5-frame tail merges into the previous segment
        assert_eq!(eval_segments(105), vec![(0, 105)]);
        // a 10-frame tail is long enough to stand alone
        assert_eq!(eval_segments(210), vec![(0, 100), (100, 200), (200, 210)]);
        assert_eq!(eval_segments(7), vec![(0, 7)]);
    }

    fn joints_sequence(n: usize, seed: u64) -> Vec<Vec<Vector3<f64>>> {
        (0..n)
            .map(|t| {
                rand_points(15, seed + t as u64, 0.8)
                    .into_iter()
                    .map(|p| p + Vector3::new(t as f64 * 0.05, 0.9, 0.0))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn mpjpe_zero_on_identical_and_rigid_motion() {
        let gt = joints_sequence(120, 10);
        assert_relative_eq!(
            mpjpe_100(&gt, &gt, AlignMode::Full).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        let g = rand_rigid(11);
        let pred: Vec<Vec<_>> = gt
            .iter()
            .map(|f| f.iter().map(|&p| g.apply(p)).collect())
            .collect();
        assert!(mpjpe_100(&pred, &gt, AlignMode::Full).unwrap() < 1e-6);
        assert!(mpjpe_100(&pred, &gt, AlignMode::FirstTwoFrames).unwrap() < 1e-6);
    }

    #[test]
    fn mpjpe_matches_brute_force_on_drift_pattern() {
        let gt = joints_sequence(230, 20);
        // constant 50 mm offset from frame 2 on
        let pred: Vec<Vec<_>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let off = if t >= 2 {
                    Vector3::new(0.05, 0.0, 0.0)
                } else {
                    Vector3::zeros()
                };
                f.iter().map(|&p| p + off).collect()
            })
            .collect();

        for mode in [AlignMode::Full, AlignMode::FirstTwoFrames] {
            // straight-line reimplementation: explicit segment loop
            let bounds = [(0usize, 100usize), (100, 200), (200, 230)];
            let mut acc = 0.0;
            for &(a, b) in &bounds {
                let fit = match mode {
                    AlignMode::Full => b - a,
                    AlignMode::FirstTwoFrames => 2,
                };
                let src: Vec<_> = pred[a..a + fit].iter().flatten().copied().collect();
                let dst: Vec<_> = gt[a..a + fit].iter().flatten().copied().collect();
                let al = rigid_align(&src, &dst).unwrap();
                let mut s = 0.0;
                let mut n = 0;
                for t in a..b {
                    for (p, g) in pred[t].iter().zip(&gt[t]) {
                        s += (al.apply(*p) - g).norm();
                        n += 1;
                    }
                }
                acc += s / n as f64;
            }
            let expected = acc / 3.0 * 1000.0;
            assert_relative_eq!(
                mpjpe_100(&pred, &gt, mode).unwrap(),
                expected,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn wa_mpjpe_never_exceeds_w_mpjpe() {
        for seed in 0..8 {
            let gt = joints_sequence(150, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred: Vec<Vec<_>> = gt
                .iter()
                .map(|f| {
                    f.iter()
                        .map(|&p| {
                            p + Vector3::new(
                                rng.gen_range(-0.05..0.05),
                                rng.gen_range(-0.05..0.05),
                                rng.gen_range(-0.05..0.05),
                            )
                        })
                        .collect()
                })
                .collect();
            let wa = mpjpe_100(&pred, &gt, AlignMode::Full).unwrap();
            let w = mpjpe_100(&pred, &gt, AlignMode::FirstTwoFrames).unwrap();
            assert!(wa <= w + 1e-9, "wa={} w={}", wa, w);
        }
    }

    #[test]
    fn rte_examples() {
        // constant 1 m error along a 100 m path
        let gt: Vec<_> = (0..101).map(|t| Vector3::new(t as f64, 0.0, 0.0)).collect();
        let pred: Vec<_> = gt.iter().map(|&p| p + Vector3::new(0.0, 1.0, 0.0)).collect();
        // rigid alignment can tilt the line; the aligned error is bounded by 1 m
        let v = rte(&pred, &gt).unwrap();
        assert!(v <= 1.0 + 1e-9);

        assert_relative_eq!(rte(&gt, &gt).unwrap(), 0.0, epsilon = 1e-12);
        let g = rand_rigid(5);
        let moved: Vec<_> = gt.iter().map(|&p| g.apply(p)).collect();
        assert!(rte(&moved, &gt).unwrap() < 1e-9);

        let stuck = vec![Vector3::zeros(); 5];
        assert!(matches!(rte(&stuck, &stuck), Err(Error::ZeroPathLength)));
    }

    #[test]
    fn ate_matches_brute_force_oracle() {
        let gt: Vec<RigidTransform> = (0..50)
            .map(|t| {
                RigidTransform::from_translation(Vector3::new(
                    t as f64 * 0.1,
                    1.0 + (t as f64 * 0.3).sin() * 0.2,
                    (t as f64 * 0.2).cos(),
                ))
            })
            .collect();
        let pred: Vec<RigidTransform> = gt
            .iter()
            .map(|p| RigidTransform::new(p.rotation, p.translation + Vector3::new(0.0, 0.5, 0.0)))
            .collect();
        let v = ate(&pred, &gt).unwrap();
        // independent check: align centers with rigid_align, RMS by hand
        let pc: Vec<_> = pred.iter().map(|p| p.translation).collect();
        let gc: Vec<_> = gt.iter().map(|p| p.translation).collect();
        let al = rigid_align(&pc, &gc).unwrap();
        let rms = (pc
            .iter()
            .zip(&gc)
            .map(|(p, g)| (al.apply(*p) - g).norm_squared())
            .sum::<f64>()
            / pc.len() as f64)
            .sqrt();
        assert_relative_eq!(v, rms, epsilon = 1e-9);

        assert_relative_eq!(ate(&gt, &gt).unwrap(), 0.0, epsilon = 1e-12);
        // doubled scale is not absorbed
        let doubled: Vec<RigidTransform> = gt
            .iter()
            .map(|p| RigidTransform::new(p.rotation, p.translation * 2.0))
            .collect();
        assert!(ate(&doubled, &gt).unwrap() > 0.5);
    }

    #[test]
    fn depth_metric_arithmetic() {
        let mut gt = DepthMap::new(8, 8);
        for i in 0..64 {
            gt.values[i] = 1.0 + i as f64 * 0.1;
            gt.valid[i] = true;
        }
        let same = depth_metrics(&[gt.clone()], &[gt.clone()]).unwrap();
        assert_eq!(same, (0.0, 1.0));

        let mut up = gt.clone();
        for v in up.values.iter_mut() {
            *v *= 1.1;
        }
        let (ar, d) = depth_metrics(&[up], &[gt.clone()]).unwrap();
        assert_relative_eq!(ar, 0.1, epsilon = 1e-12);
        assert_relative_eq!(d, 1.0, epsilon = 1e-12);

        let mut double = gt.clone();
        for v in double.values.iter_mut() {
            *v *= 2.0;
        }
        let (ar, d) = depth_metrics(&[double], &[gt.clone()]).unwrap();
        assert_relative_eq!(ar, 1.0, epsilon = 1e-12);
        assert_relative_eq!(d, 0.0, epsilon = 1e-12);

        let empty = DepthMap::new(8, 8);
        assert!(matches!(
            depth_metrics(&[empty.clone()], &[empty]),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn chamfer_hand_cases() {
        let a = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        assert_relative_eq!(chamfer(&a, &a).unwrap(), 0.0, epsilon = 1e-15);

        let b = vec![
            Vector3::new(0.0, 0.25, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        ];
        // one point shifted by 0.25: each direction contributes 0.125 mean
        assert_relative_eq!(chamfer(&a, &b).unwrap(), 0.125, epsilon = 1e-12);

        assert!(chamfer(&[], &a).is_err());
        assert!(chamfer(&a, &[]).is_err());
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let a = rand_points(500, 42, 3.0);
        let b = rand_points(400, 43, 3.0);
        let fast = chamfer(&a, &b).unwrap();
        let slow = chamfer_brute(&a, &b).unwrap();
        assert!((fast - slow).abs() < 1e-12, "fast={} slow={}", fast, slow);
        assert_relative_eq!(
            chamfer(&a, &b).unwrap(),
            chamfer(&b, &a).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn metrics_invariant_to_common_rigid_motion() {
        let gt = joints_sequence(60, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pred: Vec<Vec<_>> = gt
            .iter()
            .map(|f| {
                f.iter()
                    .map(|&p| p + Vector3::new(rng.gen_range(-0.02..0.02), 0.0, 0.0))
                    .collect()
            })
            .collect();
        let g = rand_rigid(9);
        let move_all = |seq: &[Vec<Vector3<f64>>]| -> Vec<Vec<Vector3<f64>>> {
            seq.iter()
                .map(|f| f.iter().map(|&p| g.apply(p)).collect())
                .collect()
        };
        let base = mpjpe_100(&pred, &gt, AlignMode::Full).unwrap();
        let moved = mpjpe_100(&move_all(&pred), &move_all(&gt), AlignMode::Full).unwrap();
        assert_relative_eq!(base, moved, epsilon = 1e-6);
    }

    #[test]
    fn report_text_skips_missing_fields() {
        let r = MetricReport {
            ate_m: Some(0.25),
            delta_125: Some(1.0),
            ..Default::default()
        };
        let text = r.to_text();
        assert!(text.contains("ate_m 0.25"));
        assert!(text.contains("delta_125 1.0"));
        assert!(!text.contains("chamfer"));
    }
}
