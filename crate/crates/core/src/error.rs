//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("relative rotation angle {angle} rad is within 1e-6 of the log-map cut at pi")]
    AngleAtCut { angle: f64 },

    #[error("point behind camera: camera-frame z = {z}")]
    BehindCamera { z: f64 },

    #[error("scale must be positive, got {sigma}")]
    NonPositiveScale { sigma: f64 },

    #[error("dimension mismatch: {context} expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("scene graph disconnected: frame {frame} has no edge")]
    DisconnectedGraph { frame: usize },

    #[error("degenerate matches on edge ({i}, {j}): {reason}")]
    DegenerateMatches { i: usize, j: usize, reason: String },

    #[error("query {value} outside valid range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("index mismatch: {context} has lengths {a} vs {b}")]
    IndexMismatch {
        context: &'static str,
        a: usize,
        b: usize,
    },

    #[error("non-finite loss encountered at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("segments {left} and {right} share no overlap frame")]
    MissingOverlap { left: usize, right: usize },

    #[error("length mismatch: {context} has {a} vs {b} entries")]
    LengthMismatch {
        context: &'static str,
        a: usize,
        b: usize,
    },

    #[error("ground-truth path length is zero")]
    ZeroPathLength,

    #[error("no valid pixels in the compared depth maps")]
    NoValidPixels,

    #[error("no valid frames for the median-scale baseline")]
    NoValidFrames,

    #[error("empty point cloud: {which}")]
    EmptyCloud { which: &'static str },

    #[error("degenerate point configuration for rigid alignment: {reason}")]
    DegenerateConfiguration { reason: String },

    #[error("invalid scenario spec: {reason}")]
    InvalidSpec { reason: String },

    #[error("parse error in {path}: {reason}")]
    ParseError { path: String, reason: String },

    #[error("shape error in {path}: {reason}")]
    ShapeError { path: String, reason: String },

    #[error("unsupported bundle version {found} (supported: {supported})")]
    VersionError { found: u32, supported: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
