//! Quaternions, rigid transforms, pinhole projection and trifocal point transfer.

mod camera;
mod pose;
mod quaternion;
mod trifocal;

pub use camera::{build_projection, choose_line, CameraIntrinsics, ImageLine, Projected, ProjectionMatrix};
pub use pose::RigidPose;
pub use quaternion::{Quaternion, UNIT_TOLERANCE};
pub use trifocal::{
    epipolar_direction, trifocal_from_projections, TrifocalTensor, DEGENERATE_NORM,
    TRANSFER_MIN_SCALE,
};
