//! Human-scene contact correspondences.
//!
//! For every labeled contact vertex that is visible (its projection lands
//! on a background pixel), the matching scene point is the trimmed depth
//! pixel whose projection is nearest in pixel space. Because the scene
//! points live in the same frame as the camera doing the projection, that
//! nearest projection is simply the nearest valid pixel, so the search
//! only needs to scan the window of radius `max_px` around the vertex
//! projection.

use nalgebra::{Vector2, Vector3};

use crate::geom::{self, DepthMap, Intrinsics, RigidTransform};
use crate::human::BodyFrame;
use crate::scene::ForegroundMask;

/// A matched (body vertex, scene point) pair for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactLink {
    pub frame_id: usize,
    pub vertex_index: usize,
    /// Scene point in the world frame at link-construction time.
    pub scene_point: Vector3<f64>,
    /// Pre-scale camera-frame scene point; the optimizer rebuilds the
    /// world position from this under the current (P, sigma, depth).
    pub scene_prescale: Vector3<f64>,
    pub scene_pixel: Vector2<f64>,
    pub pixel_distance: f64,
}

/// A vertex whose contact persists from frame `frame_id` to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersistentContact {
    pub frame_id: usize,
    pub vertex_index: usize,
}

/// Search options beyond the pixel-distance cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSearch {
    /// Maximum pixel distance between vertex projection and scene pixel.
    pub max_px: f64,
    /// Visibility relaxation: the vertex projection counts as visible if
    /// any background pixel lies within this Chebyshev radius (0 = exact).
    pub visibility_dilation_px: usize,
}

impl Default for ContactSearch {
    fn default() -> Self {
        Self {
            max_px: 12.0,
            visibility_dilation_px: 0,
        }
    }
}

/// Contact correspondences for one body frame against a foreground-trimmed
/// scene depth map. Empty when no contact vertex qualifies.
pub fn find_contacts(
    bf: &BodyFrame,
    p: &RigidTransform,
    k: &Intrinsics,
    scene_depth: &DepthMap,
    sigma: f64,
    mask: &ForegroundMask,
    search: &ContactSearch,
) -> Vec<ContactLink> {
    let mut out = Vec::new();
    for (vi, &v_body) in bf.vertices.iter().enumerate() {
        if !bf.contact[vi] {
            continue;
        }
        let x_h = p.apply(bf.t_c.apply(v_body));
        let Ok(px) = geom::project(k, p, x_h) else {
            continue;
        };
        if !mask.background_within(px, search.visibility_dilation_px) {
            continue;
        }
        if let Some(link) = nearest_scene_pixel(vi, bf.frame_id, px, x_h, p, k, scene_depth, sigma, search.max_px) {
            out.push(link);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn nearest_scene_pixel(
    vertex_index: usize,
    frame_id: usize,
    px: Vector2<f64>,
    x_h: Vector3<f64>,
    p: &RigidTransform,
    k: &Intrinsics,
    scene_depth: &DepthMap,
    sigma: f64,
    max_px: f64,
) -> Option<ContactLink> {
    let u0 = ((px.x - max_px).ceil().max(0.0)) as usize;
    let v0 = ((px.y - max_px).ceil().max(0.0)) as usize;
    if px.x + max_px < 0.0 || px.y + max_px < 0.0 {
        return None;
    }
    let u1 = ((px.x + max_px).floor() as i64).min(scene_depth.width as i64 - 1);
    let v1 = ((px.y + max_px).floor() as i64).min(scene_depth.height as i64 - 1);
    if u1 < u0 as i64 || v1 < v0 as i64 {
        return None;
    }
    let vertex_cam_z = p.rotation.transpose() * (x_h - p.translation);

    // best = (pixel distance, |cam depth difference|, row-major index)
    let mut best: Option<(f64, f64, usize)> = None;
    for v in v0..=(v1 as usize) {
        for u in u0..=(u1 as usize) {
            let i = scene_depth.idx(u, v);
            if !scene_depth.valid[i] {
                continue;
            }
            let d = (Vector2::new(u as f64, v as f64) - px).norm();
            if d > max_px {
                continue;
            }
            let depth_diff = (sigma * scene_depth.values[i] - vertex_cam_z.z).abs();
            let cand = (d, depth_diff, i);
            let better = match best {
                None => true,
                Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2))),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best.map(|(d, _, i)| {
        let u = i % scene_depth.width;
        let v = i / scene_depth.width;
        let prescale = k.ray(u as f64, v as f64) * scene_depth.values[i];
        ContactLink {
            frame_id,
            vertex_index,
            scene_point: p.apply(prescale * sigma),
            scene_prescale: prescale,
            scene_pixel: Vector2::new(u as f64, v as f64),
            pixel_distance: d,
        }
    })
}

/// Vertices linked in both adjacent frames, ordered by vertex index.
pub fn find_persistent(links_t: &[ContactLink], links_t1: &[ContactLink]) -> Vec<PersistentContact> {
    let mut out: Vec<PersistentContact> = links_t
        .iter()
        .filter(|l| links_t1.iter().any(|m| m.vertex_index == l.vertex_index))
        .map(|l| PersistentContact {
            frame_id: l.frame_id,
            vertex_index: l.vertex_index,
        })
        .collect();
    out.sort_by_key(|c| c.vertex_index);
    out.dedup_by_key(|c| c.vertex_index);
    out
}
