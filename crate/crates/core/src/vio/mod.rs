//! Sliding-window visual-inertial odometry: the 30-dimensional window state,
//! its IMU-driven transition, the stacked trifocal transfer measurement,
//! feature bucketing, three-point RANSAC and the per-frame filter cycle.

mod bucketing;
mod config;
mod measurement;
mod pipeline;
mod ransac;
pub mod state;
mod transition;

pub use bucketing::{bucket, bucket_with};
pub use config::{
    forward_camera_extrinsics, BucketConfig, InitialCovariance, ProcessNoise, RansacConfig, TrackNoise, VioConfig,
};
pub use measurement::{
    camera_poses, stack_measurement_model, transfer_line, window_tensor, MeasurementModel, StackedPrediction,
};
pub use pipeline::{
    frame_seed, imu_between, infer_confidence, make_filter, mean_gyro, predict, run_sequence, vio_step,
    ConfidenceInference, FrameDiagnostics, FrameInput, RunOutput, SequenceInput, TrajectoryPoint, VioPipeline,
};
pub use ransac::{ransac_gate, GateStatus, RansacOutcome};
pub use state::{VioState, STATE_DIM};
pub use transition::{transition, transition_vector};
