use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::state::{BA, BG, P1, P2, P3, Q1, Q2, Q3, STATE_DIM, V};
use crate::confidence::{ConfidenceLimits, ConfidenceMode};
use crate::error::{Error, Result};
use crate::filter::SigmaParams;
use crate::geometry::{CameraIntrinsics, Quaternion, RigidPose};
use crate::imu::{default_gravity, ImuNoiseSpec};

/// Pixel grid used to spread the retained features over the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketConfig {
    pub columns: usize,
    pub rows: usize,
    pub max_features: usize,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            columns: 8,
            rows: 4,
            max_features: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// transfer-error threshold, px
    pub threshold: f64,
    pub iterations: usize,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 4.0,
            iterations: 100,
            min_inlier_ratio: 0.3,
            seed: 0x7269_6676,
        }
    }
}

/// Diagonal of the initial covariance, per block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialCovariance {
    pub position: f64,
    pub velocity: f64,
    pub orientation: f64,
    pub accel_bias: f64,
    pub gyro_bias: f64,
    pub window_pose: f64,
}

impl Default for InitialCovariance {
    fn default() -> Self {
        Self {
            position: 1e-2,
            velocity: 1e-1,
            orientation: 1e-3,
            accel_bias: 1e-2,
            gyro_bias: 1e-3,
            window_pose: 1e-2,
        }
    }
}

impl InitialCovariance {
    /// The same variance on every block, for starts known up to `variance`.
    pub fn known(variance: f64) -> Self {
        Self {
            position: variance,
            velocity: variance,
            orientation: variance,
            accel_bias: variance,
            gyro_bias: variance,
            window_pose: variance,
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut d = vec![0.0; STATE_DIM];
        let mut fill = |at: usize, n: usize, v: f64| d[at..at + n].iter_mut().for_each(|x| *x = v);
        fill(P1, 3, self.position);
        fill(V, 3, self.velocity);
        fill(Q1, 4, self.orientation);
        fill(BA, 3, self.accel_bias);
        fill(BG, 3, self.gyro_bias);
        fill(P2, 3, self.window_pose);
        fill(Q2, 4, self.orientation);
        fill(P3, 3, self.window_pose);
        fill(Q3, 4, self.orientation);
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.velocity,
            self.orientation,
            self.accel_bias,
            self.gyro_bias,
            self.window_pose,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("initial covariance entries must be positive".into()))
        }
    }
}

/// Process noise, derived per frame from the IMU noise densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessNoise {
    /// IMU noise the filter assumes
    pub imu: ImuNoiseSpec,
    /// variance added to the two older window poses
    pub window_floor: f64,
    /// variance added to every position/velocity entry
    pub kinematic_floor: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            imu: ImuNoiseSpec::low_cost(),
            window_floor: 1e-12,
            kinematic_floor: 1e-8,
        }
    }
}

impl ProcessNoise {
    /// `Q` for a frame of length `dt` integrated from `intervals` IMU steps.
    ///
    /// White accelerometer noise on `N` steps of length `h` gives velocity
    /// variance `N sigma_a^2 h^2` and position variance `N sigma_a^2 h^4 / 4`;
    /// gyro noise gives an angle variance `theta^2 = N sigma_g^2 h^2`, mapped
    /// onto the quaternion through `q (0, d theta / 2)`; biases walk with
    /// `sigma^2 dt`.
    pub fn matrix(&self, q1: &Quaternion, dt: f64, intervals: usize) -> DMatrix<f64> {
        let n = intervals.max(1) as f64;
        let h = dt / n;
        let mut q = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let sa2 = self.imu.sigma_na.powi(2);
        let sg2 = self.imu.sigma_ng.powi(2);
        let pos = n * sa2 * h.powi(4) / 4.0 + self.kinematic_floor;
        let vel = n * sa2 * h * h + self.kinematic_floor;
        let theta2 = n * sg2 * h * h;
        for i in 0..3 {
            q[(P1 + i, P1 + i)] = pos;
            q[(V + i, V + i)] = vel;
            q[(BA + i, BA + i)] = self.imu.sigma_ba_walk.powi(2) * dt;
            q[(BG + i, BG + i)] = self.imu.sigma_bg_walk.powi(2) * dt;
            q[(P2 + i, P2 + i)] = self.window_floor;
            q[(P3 + i, P3 + i)] = self.window_floor;
        }
        let xi = quaternion_right_jacobian(q1);
        let qq = xi * xi.transpose() * (theta2 / 4.0);
        q.view_mut((Q1, Q1), (4, 4)).copy_from(&qq);
        for at in [Q2, Q3] {
            for i in 0..4 {
                q[(at + i, at + i)] = self.window_floor;
            }
        }
        q
    }
}

/// `d(q (0, v)) / dv`, a 4x3 matrix.
fn quaternion_right_jacobian(q: &Quaternion) -> nalgebra::Matrix4x3<f64> {
    nalgebra::Matrix4x3::new(
        -q.x, -q.y, -q.z, //
        q.w, -q.z, q.y, //
        q.z, q.w, -q.x, //
        -q.y, q.x, q.w,
    )
}

/// How pixel noise in the two older views enters the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackNoise {
    /// `R = sigma_px^2 I`; the older views are treated as exact.
    #[default]
    Ignore,
    /// Adds the propagated older-view noise to each feature's `R` block.
    Covariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VioConfig {
    /// `imu_from_camera`
    pub extrinsics: RigidPose,
    pub intrinsics: CameraIntrinsics,
    pub image_width: f64,
    pub image_height: f64,
    pub gravity: Vector3<f64>,
    pub process: ProcessNoise,
    pub initial_covariance: InitialCovariance,
    /// measurement noise per pixel coordinate, px
    pub sigma_px: f64,
    pub track_noise: TrackNoise,
    pub ransac: RansacConfig,
    pub buckets: BucketConfig,
    pub sigma: SigmaParams,
    pub mode: ConfidenceMode,
    pub confidence_limits: ConfidenceLimits,
}

/// Camera looking along the x axis of a forward-left-up IMU frame, 0.3 m
/// ahead of and 0.8 m above the IMU origin.
pub fn forward_camera_extrinsics() -> RigidPose {
    let r = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    RigidPose::new(Quaternion::from_dcm(&r), Vector3::new(0.3, 0.0, 0.8))
}

impl Default for VioConfig {
    fn default() -> Self {
        Self {
            extrinsics: forward_camera_extrinsics(),
            intrinsics: CameraIntrinsics::kitti_like(),
            image_width: 1242.0,
            image_height: 375.0,
            gravity: default_gravity(),
            process: ProcessNoise::default(),
            initial_covariance: InitialCovariance::default(),
            sigma_px: 1.0,
            track_noise: TrackNoise::default(),
            ransac: RansacConfig::default(),
            buckets: BucketConfig::default(),
            sigma: SigmaParams::default(),
            mode: ConfidenceMode::default(),
            confidence_limits: ConfidenceLimits::default(),
        }
    }
}

impl VioConfig {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.ransac.threshold > 0.0) {
            return Err(Error::Config(format!(
                "RANSAC threshold must be positive, got {}",
                self.ransac.threshold
            )));
        }
        if self.buckets.max_features < 3 {
            return Err(Error::Config(format!(
                "max features must be at least 3, got {}",
                self.buckets.max_features
            )));
        }
        if self.buckets.columns == 0 || self.buckets.rows == 0 {
            return Err(Error::Config("bucket grid must be non-empty".into()));
        }
        if !(self.sigma_px > 0.0) {
            return Err(Error::Config("sigma_px must be positive".into()));
        }
        if !(self.image_width > 0.0 && self.image_height > 0.0) {
            return Err(Error::Config("image size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ransac.min_inlier_ratio) {
            return Err(Error::Config("min inlier ratio must lie in [0, 1]".into()));
        }
        let lim = &self.confidence_limits;
        if !(lim.floor > 0.0 && lim.cap >= lim.floor && lim.inverted_max > 0.0) {
            return Err(Error::Config("confidence limits need 0 < floor <= cap".into()));
        }
        if !self.process.imu.is_valid() {
            return Err(Error::Config("process noise must be finite and non-negative".into()));
        }
        let defect = (self.extrinsics.rotation.norm() - 1.0).abs();
        if defect > 1e-6 {
            return Err(Error::Config(format!("extrinsic quaternion is not unit (|q|-1 = {defect:e})")));
        }
        self.initial_covariance.validate()
    }

    /// `R = sigma_px^2 I`.
    pub fn measurement_noise(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::identity(dim, dim) * self.sigma_px.powi(2)
    }

    pub fn in_image(&self, px: &nalgebra::Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.image_width && px.y < self.image_height
    }
}
