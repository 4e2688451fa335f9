//! Scene-graph construction, mask trimming, and coarse global alignment.
//!
//! The coarse aligner is a spanning-tree similarity (Procrustes-with-scale)
//! chain over pairwise 3D matches. It only has to be good enough to
//! initialize the joint optimizer; redundant edges are fused by
//! confidence-weighted averaging of tangent-space poses and log-scales.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::geom::{self, log_so3, DepthMap, Intrinsics, PixelPoint, RigidTransform};
use crate::par;
use crate::{Error, Result};

/// Frame connectivity for pairwise alignment. Edges are canonical (i < j).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    pub frame_count: usize,
    pub edges: Vec<(usize, usize)>,
}

/// One pairwise 3D correspondence. Points are pre-scale, anchored to their
/// frame's pixel-aligned pointmap (camera coordinates of that frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEntry {
    pub point_i: Vector3<f64>,
    pub point_j: Vector3<f64>,
    pub pixel_i: Vector2<f64>,
    pub pixel_j: Vector2<f64>,
    /// Clamped to [0, 1] at ingestion.
    pub confidence: f64,
}

/// All correspondences of one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub edge: (usize, usize),
    pub entries: Vec<MatchEntry>,
}

/// Binary foreground mask (true = moving foreground / human).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub width: usize,
    pub height: usize,
    pub grid: Vec<bool>,
}

impl ForegroundMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            grid: vec![false; width * height],
        }
    }

    /// Foreground test at a (possibly fractional) pixel, nearest lookup.
    /// Pixels outside the image count as foreground (not background).
    pub fn is_foreground(&self, px: Vector2<f64>) -> bool {
        let u = px.x.round();
        let v = px.y.round();
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return true;
        }
        self.grid[v as usize * self.width + u as usize]
    }

    /// True when any pixel within Chebyshev radius `radius` of `px` is
    /// background. `radius = 0` is the exact background test.
    pub fn background_within(&self, px: Vector2<f64>, radius: usize) -> bool {
        if radius == 0 {
            return !self.is_foreground(px);
        }
        let r = radius as f64;
        let u0 = (px.x - r).round().max(0.0) as usize;
        let v0 = (px.y - r).round().max(0.0) as usize;
        let u1 = ((px.x + r).round() as usize).min(self.width.saturating_sub(1));
        let v1 = ((px.y + r).round() as usize).min(self.height.saturating_sub(1));
        for v in v0..=v1 {
            for u in u0..=u1 {
                if !self.grid[v * self.width + u] {
                    return true;
                }
            }
        }
        false
    }
}

/// One frame's scene state: intrinsics, pre-scale depth, scale, mask, and
/// the initial camera pose.
#[derive(Debug, Clone)]
pub struct FrameInit {
    pub frame_id: usize,
    pub intrinsics: Intrinsics,
    pub depth: DepthMap,
    pub sigma: f64,
    pub mask: ForegroundMask,
    pub pose: RigidTransform,
}

/// Consecutive-frame edges plus sliding-window edges up to `window`, plus
/// the supplied loop edges, canonicalized to i < j and deduplicated.
pub fn build_scene_graph(
    frame_count: usize,
    window: usize,
    loop_edges: &[(usize, usize)],
) -> Result<SceneGraph> {
    let mut edges = Vec::new();
    for i in 0..frame_count {
        for d in 1..=window {
            let j = i + d;
            if j < frame_count {
                edges.push((i, j));
            }
        }
    }
    for &(a, b) in loop_edges {
        if a == b || a >= frame_count || b >= frame_count {
            continue;
        }
        edges.push((a.min(b), a.max(b)));
    }
    edges.sort_unstable();
    edges.dedup();

    let mut degree = vec![0usize; frame_count];
    for &(i, j) in &edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    if let Some(frame) = degree.iter().position(|&d| d == 0) {
        return Err(Error::DisconnectedGraph { frame });
    }
    Ok(SceneGraph { frame_count, edges })
}

/// Keep exactly the entries whose pixels lie in the background of both
/// masks; order preserved. Idempotent.
pub fn trim_by_masks(
    matches: &MatchSet,
    mask_i: &ForegroundMask,
    mask_j: &ForegroundMask,
) -> MatchSet {
    MatchSet {
        edge: matches.edge,
        entries: matches
            .entries
            .iter()
            .filter(|e| !mask_i.is_foreground(e.pixel_i) && !mask_j.is_foreground(e.pixel_j))
            .copied()
            .collect(),
    }
}

/// Clear depth validity where the mask is foreground; values untouched.
pub fn trim_pointmap(depth: &DepthMap, mask: &ForegroundMask) -> Result<DepthMap> {
    if depth.width != mask.width || depth.height != mask.height {
        return Err(Error::DimensionMismatch {
            context: "trim_pointmap",
            expected: (depth.width, depth.height),
            got: (mask.width, mask.height),
        });
    }
    let mut out = depth.clone();
    for (v, m) in out.valid.iter_mut().zip(&mask.grid) {
        if *m {
            *v = false;
        }
    }
    Ok(out)
}

/// Weighted similarity alignment (Umeyama): finds (s, R, t) minimizing
/// sum w |dst - (s R src + t)|^2.
pub fn umeyama_similarity(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
) -> Result<(f64, Matrix3<f64>, Vector3<f64>)> {
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration {
            reason: format!("{} points, need at least 3", src.len()),
        });
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::DegenerateConfiguration {
            reason: "all weights zero".into(),
        });
    }
    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for ((s, d), &w) in src.iter().zip(dst).zip(weights) {
        mu_s += s * w;
        mu_d += d * w;
    }
    mu_s /= wsum;
    mu_d /= wsum;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for ((s, d), &w) in src.iter().zip(dst).zip(weights) {
        let sc = s - mu_s;
        let dc = d - mu_d;
        cov += (dc * sc.transpose()) * w;
        var_s += w * sc.norm_squared();
    }
    cov /= wsum;
    var_s /= wsum;

    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let sv = svd.singular_values;
    if sv[1] < 1e-12 * sv[0].max(1e-300) || var_s < 1e-18 {
        return Err(Error::DegenerateConfiguration {
            reason: "matched points are collinear or coincident".into(),
        });
    }
    let mut s_fix = Vector3::new(1.0, 1.0, 1.0);
    if (u * vt).determinant() < 0.0 {
        s_fix.z = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&s_fix) * vt;
    let scale = (sv[0] * s_fix.x + sv[1] * s_fix.y + sv[2] * s_fix.z) / var_s;
    if scale <= 0.0 {
        return Err(Error::DegenerateConfiguration {
            reason: format!("nonpositive similarity scale {}", scale),
        });
    }
    let t = mu_d - r * mu_s * scale;
    Ok((scale, r, t))
}

/// Per-frame coarse alignment result.
#[derive(Debug, Clone, Copy)]
pub struct FramePose {
    pub pose: RigidTransform,
    pub sigma: f64,
}

fn clamped_conf(c: f64) -> f64 {
    c.clamp(0.0, 1.0)
}

struct EdgeAlignment {
    i: usize,
    j: usize,
    /// x_j = scale * rot * x_i + trans
    fwd: (f64, Matrix3<f64>, Vector3<f64>),
    /// x_i = scale * rot * x_j + trans
    bwd: (f64, Matrix3<f64>, Vector3<f64>),
    weight: f64,
}

/// Coarse global alignment: frame 0 pinned to identity with `sigma0`;
/// every other frame estimated by similarity alignment of matched points
/// along a BFS spanning tree, fusing redundant edges by confidence-weighted
/// averaging of tangent-space poses and log-scales.
pub fn coarse_align(
    graph: &SceneGraph,
    matches: &[MatchSet],
    sigma0: f64,
) -> Result<Vec<FramePose>> {
    let n = graph.frame_count;
    let find_set = |e: (usize, usize)| matches.iter().find(|m| m.edge == e);

    for &(i, j) in &graph.edges {
        let m = find_set((i, j)).ok_or_else(|| Error::DegenerateMatches {
            i,
            j,
            reason: "edge has no match set".into(),
        })?;
        if m.entries.len() < 3 {
            return Err(Error::DegenerateMatches {
                i,
                j,
                reason: format!("only {} matches", m.entries.len()),
            });
        }
    }

    // per-edge pairwise similarity, both directions (parallel, order kept)
    let aligned: Vec<Result<EdgeAlignment>> = par::map_slice(&graph.edges, |&(i, j)| {
        let m = find_set((i, j)).expect("checked above");
        let src: Vec<_> = m.entries.iter().map(|e| e.point_i).collect();
        let dst: Vec<_> = m.entries.iter().map(|e| e.point_j).collect();
        let w: Vec<_> = m.entries.iter().map(|e| clamped_conf(e.confidence)).collect();
        let fwd = umeyama_similarity(&src, &dst, &w).map_err(|_| Error::DegenerateMatches {
            i,
            j,
            reason: "collinear matched points".into(),
        })?;
        let bwd = umeyama_similarity(&dst, &src, &w).map_err(|_| Error::DegenerateMatches {
            i,
            j,
            reason: "collinear matched points".into(),
        })?;
        Ok(EdgeAlignment {
            i,
            j,
            fwd,
            bwd,
            weight: w.iter().sum(),
        })
    });
    let aligned: Vec<EdgeAlignment> = aligned.into_iter().collect::<Result<_>>()?;

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e_idx, e) in aligned.iter().enumerate() {
        adjacency[e.i].push(e_idx);
        adjacency[e.j].push(e_idx);
    }

    let mut result: Vec<Option<FramePose>> = vec![None; n];
    result[0] = Some(FramePose {
        pose: RigidTransform::identity(),
        sigma: sigma0,
    });

    // BFS order from frame 0
    let mut order = vec![0usize];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut head = 0;
    while head < order.len() {
        let f = order[head];
        head += 1;
        for &e_idx in &adjacency[f] {
            let e = &aligned[e_idx];
            let o = if e.i == f { e.j } else { e.i };
            if !seen[o] {
                seen[o] = true;
                order.push(o);
            }
        }
    }
    if let Some(frame) = seen.iter().position(|&s| !s) {
        return Err(Error::DisconnectedGraph { frame });
    }

    for &c in order.iter().skip(1) {
        // candidates from every edge whose other endpoint is estimated
        let mut cands: Vec<(FramePose, f64)> = Vec::new();
        for &e_idx in &adjacency[c] {
            let e = &aligned[e_idx];
            let p = if e.i == c { e.j } else { e.i };
            let Some(parent) = result[p] else { continue };
            // alignment mapping parent's points onto c's points
            let (s, r, t) = if e.i == p { e.fwd } else { e.bwd };
            // world consistency: P_c = (R_p R^T, t_p - sigma_c R_c t), sigma_c = sigma_p / s
            let sigma_c = parent.sigma / s;
            let r_c = parent.pose.rotation * r.transpose();
            let t_c = parent.pose.translation - r_c * t * sigma_c;
            cands.push((
                FramePose {
                    pose: RigidTransform::new(r_c, t_c),
                    sigma: sigma_c,
                },
                e.weight,
            ));
        }
        debug_assert!(!cands.is_empty());
        result[c] = Some(fuse_candidates(&cands));
    }

    Ok(result.into_iter().map(|p| p.expect("all estimated")).collect())
}

/// Weighted fusion of pose candidates: rotations averaged in the tangent
/// space of the first candidate, translations and log-scales linearly.
fn fuse_candidates(cands: &[(FramePose, f64)]) -> FramePose {
    let wsum: f64 = cands.iter().map(|(_, w)| w).sum();
    if cands.len() == 1 || wsum <= 0.0 {
        return cands[0].0;
    }
    let ref_rot = cands[0].0.pose.rotation;
    let mut omega = Vector3::zeros();
    let mut trans = Vector3::zeros();
    let mut log_sigma = 0.0;
    for (c, w) in cands {
        let d = log_so3(&(ref_rot.transpose() * c.pose.rotation)).unwrap_or_else(|_| Vector3::zeros());
        omega += d * *w;
        trans += c.pose.translation * *w;
        log_sigma += c.sigma.ln() * *w;
    }
    FramePose {
        pose: RigidTransform::new(
            ref_rot * geom::exp_so3(omega / wsum),
            trans / wsum,
        ),
        sigma: (log_sigma / wsum).exp(),
    }
}

/// Union of unprojected, foreground-trimmed frame point clouds, keeping
/// every `keep_stride`-th valid pixel in row-major order.
pub fn assemble_pointcloud(
    frames: &[FrameInit],
    poses: &[RigidTransform],
    keep_stride: usize,
) -> Result<Vec<PixelPoint>> {
    assert!(keep_stride >= 1);
    let clouds: Vec<Result<Vec<PixelPoint>>> = par::map_range(0..frames.len(), |f| {
        let fr = &frames[f];
        let trimmed = trim_pointmap(&fr.depth, &fr.mask)?;
        let all = geom::unproject(&fr.intrinsics, &poses[f], fr.sigma, &trimmed)?;
        Ok(all
            .into_iter()
            .enumerate()
            .filter(|(k, _)| k % keep_stride == 0)
            .map(|(_, p)| p)
            .collect())
    });
    let mut out = Vec::new();
    for c in clouds {
        out.extend(c?);
    }
    Ok(out)
}
