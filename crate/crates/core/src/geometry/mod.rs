//! Camera model, poses, minimal and robust pose solvers and stereo depth.

mod camera;
mod p3p;
mod pose;
mod ransac;
mod stereo;

pub use camera::{backproject, project, CameraIntrinsics, MIN_DEPTH};
pub use p3p::{p3p_solve, P3P_RESIDUAL_TOL};
pub use pose::{orthonormalize, pose_errors, rotation_angle, Pose};
pub use ransac::{ransac_p3p, reprojection_error, RansacOutcome, RansacParams};
pub use stereo::stereo_block_match;
