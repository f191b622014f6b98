//! Alignment and reconstruction metrics.
//!
//! - [`nme_landmarks`] / [`nme_dense`]: mean point error over a box-size
//!   normalizer, in percent.
//! - [`ced`]: cumulative error distribution with its normalized AUC.
//! - [`icp`] and [`recon_error`]: rigid registration and interocular-normalized
//!   reconstruction error.
//! - [`bucket_by_yaw`]: per-yaw-range aggregation into an [`EvalReport`].

mod icp;
mod kdtree;
mod metrics;
mod report;

pub use icp::{fit_rigid, icp, recon_error, IcpConfig, IcpResult, ReconErrorKind, RigidTransform};
pub use kdtree::KdTree;
pub use metrics::{ced, nme_dense, nme_landmarks, nme_points, BoxNorm, CedCurve, Dims, CED_GRID_POINTS};
pub use report::{bucket_by_yaw, write_ced_csv, EvalReport, YawBucket, YAW_BUCKETS};
