//! Trifocal-tensor sliding-window UKF visual-inertial odometry with
//! IMU-derived feature confidence weighting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod confidence;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geometry;
pub mod imu;
pub mod kitti_io;
pub mod par;
pub mod sim;
pub mod tracks;
pub mod vio;

pub use error::{Error, Result};
