//! Joint human-scene reconstruction at metric scale.
//!
//! Given per-frame scene initializations (depth maps, pairwise matches,
//! intrinsics), per-frame body initializations (posed vertices, joints, local
//! transforms) and per-vertex contact labels, this crate jointly refines
//! camera poses, per-frame scales, depth maps and body transforms with
//! scene-reconstruction and human-scene contact losses, then scores the
//! result with a world-grounded metric suite.
//!
//! Modules map onto the pipeline stages:
//! - [`geom`]: SE(3) algebra, pinhole projection, metric unprojection.
//! - [`scene`]: scene graph, mask trimming, coarse global alignment.
//! - [`human`]: posed body frames and the optimizable local transform.
//! - [`contact`]: human-scene contact correspondences.
//! - [`opt`]: loss terms, gradients, Adam, the two-stage schedule.
//! - [`pipeline`]: segmentation, keyframing, stitching, trajectory chaining.
//! - [`synth`]: ground-truth synthetic scenarios and perturbed inits.
//! - [`eval`]: WA/W-MPJPE, RTE, ATE, depth metrics, chamfer distance.
//! - [`bundle`]: the on-disk container format.

pub mod bundle;
pub mod contact;
pub mod error;
pub mod eval;
pub mod geom;
pub mod human;
pub mod opt;
mod par;
pub mod pipeline;
pub mod scene;
pub mod synth;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
