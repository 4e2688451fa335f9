//! Camera and rigid-body geometry.
//!
//! SE(3) elements are stored as a rotation matrix plus a translation in
//! meters. Optimizer updates live in the tangent space and are applied by
//! retraction: `retract(T, d)` right-multiplies the rotation by
//! `exp(d.omega)` and moves the translation by `R * d.v`, so
//! `log_map(from, to)` is exact (not just first-order) under this
//! convention.
//!
//! Extrinsics convention: `P` maps camera-frame points to world-frame
//! points (camera-to-world). Depth maps store pre-scale values; metric
//! depth is always `sigma * Z`.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An element of SE(3): rotation + translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation about `axis` (need not be unit) by `angle` radians.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        Self::new(exp_so3(axis.normalize() * angle), Vector3::zeros())
    }

    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Re-orthonormalize the rotation block (nearest rotation via SVD).
    /// Used after long chains of float compositions.
    pub fn renormalized(&self) -> RigidTransform {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        RigidTransform {
            rotation: r,
            translation: self.translation,
        }
    }

    /// Max absolute deviation from orthonormality and unit determinant.
    pub fn rotation_defect(&self) -> f64 {
        let d = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let mut m = (self.rotation.determinant() - 1.0).abs();
        for e in d.iter() {
            m = m.max(e.abs());
        }
        m
    }
}

/// Tangent-space increment of SE(3): rotation part in radians,
/// translation part in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl TangentVector {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }
}

fn skew(w: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rodrigues' formula: exp of an so(3) element.
pub fn exp_so3(omega: Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    if theta < 1e-12 {
        // second-order Taylor; exact to f64 precision at this magnitude
        return Matrix3::identity() + w + w * w * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + w * a + w * w * b
}

/// Principal-branch log of a rotation matrix.
///
/// Fails with [`Error::AngleAtCut`] when the angle is within 1e-6 of pi.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if (std::f64::consts::PI - theta).abs() < 1e-6 {
        return Err(Error::AngleAtCut { angle: theta });
    }
    let axis_raw = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-9 {
        return Ok(axis_raw * 0.5);
    }
    Ok(axis_raw * (theta / (2.0 * theta.sin())))
}

/// Apply a tangent increment to a base transform.
///
/// `retract(base, 0) = base`, and `retract(base, log_map(base, to)) = to`.
pub fn retract(base: &RigidTransform, delta: &TangentVector) -> RigidTransform {
    RigidTransform {
        rotation: base.rotation * exp_so3(delta.omega),
        translation: base.translation + base.rotation * delta.v,
    }
}

/// Tangent increment carrying `from` onto `to`, i.e. the inverse of
/// [`retract`] in its second argument.
pub fn log_map(from: &RigidTransform, to: &RigidTransform) -> Result<TangentVector> {
    let rel_rot = from.rotation.transpose() * to.rotation;
    let omega = log_so3(&rel_rot)?;
    let v = from.rotation.transpose() * (to.translation - from.translation);
    Ok(TangentVector { omega, v })
}

/// Interpolate between two transforms: slerp on the rotation, lerp on the
/// translation. `s = 0` gives `a` exactly, `s = 1` gives `b` exactly.
pub fn interpolate(a: &RigidTransform, b: &RigidTransform, s: f64) -> Result<RigidTransform> {
    if s == 0.0 {
        return Ok(*a);
    }
    if s == 1.0 {
        return Ok(*b);
    }
    let omega = log_so3(&(a.rotation.transpose() * b.rotation))?;
    Ok(RigidTransform {
        rotation: a.rotation * exp_so3(omega * s),
        translation: a.translation * (1.0 - s) + b.translation * s,
    })
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidSpec {
                reason: format!("nonpositive focal length ({}, {})", self.fx, self.fy),
            });
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::InvalidSpec {
                reason: format!("principal point ({}, {}) outside image", self.cx, self.cy),
            });
        }
        Ok(())
    }

    /// Camera-frame ray direction with unit z for pixel center (u, v).
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Per-frame depth grid holding pre-scale values in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major depths; meaningful only where `valid` is set.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.width * self.height || self.valid.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                context: "depth map storage",
                expected: (self.width, self.height),
                got: (self.values.len(), self.valid.len()),
            });
        }
        for (i, (&z, &ok)) in self.values.iter().zip(&self.valid).enumerate() {
            if ok && !(z > 0.0 && z.is_finite()) {
                return Err(Error::InvalidSpec {
                    reason: format!("invalid depth {} at pixel {}", z, i),
                });
            }
        }
        Ok(())
    }
}

/// World point produced by unprojection, tagged with its source pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: usize,
    pub v: usize,
    pub point: Vector3<f64>,
}

/// Project a world point into a camera with extrinsics `P` (camera-to-world).
pub fn project(k: &Intrinsics, p: &RigidTransform, x_world: Vector3<f64>) -> Result<Vector2<f64>> {
    let q = p.rotation.transpose() * (x_world - p.translation);
    if q.z <= 1e-6 {
        return Err(Error::BehindCamera { z: q.z });
    }
    Ok(Vector2::new(
        k.fx * q.x / q.z + k.cx,
        k.fy * q.y / q.z + k.cy,
    ))
}

/// Unproject every valid pixel into the world frame at metric depth
/// `sigma * Z[pixel]`.
pub fn unproject(
    k: &Intrinsics,
    p: &RigidTransform,
    sigma: f64,
    z: &DepthMap,
) -> Result<Vec<PixelPoint>> {
    if sigma <= 0.0 {
        return Err(Error::NonPositiveScale { sigma });
    }
    let mut out = Vec::with_capacity(z.valid_count());
    for v in 0..z.height {
        for u in 0..z.width {
            let i = z.idx(u, v);
            if !z.valid[i] {
                continue;
            }
            let cam = k.ray(u as f64, v as f64) * (sigma * z.values[i]);
            out.push(PixelPoint {
                u,
                v,
                point: p.apply(cam),
            });
        }
    }
    Ok(out)
}

/// World positions of body-root-frame points under `T_g = P * T_c`.
pub fn body_to_world(
    p: &RigidTransform,
    t_c: &RigidTransform,
    points_body: &[Vector3<f64>],
) -> Vec<Vector3<f64>> {
    let t_g = p.compose(t_c);
    points_body.iter().map(|&x| t_g.apply(x)).collect()
}
