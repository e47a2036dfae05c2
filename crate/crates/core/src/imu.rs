//! IMU mechanization, measurement synthesis and noise injection.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Quaternion;

pub const STANDARD_GRAVITY: f64 = 9.80665;

/// World-frame gravity, z up.
pub fn default_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

/// One accelerometer + gyroscope reading in the IMU frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// seconds
    pub t: f64,
    /// specific force, m/s^2
    pub accel: Vector3<f64>,
    /// angular rate, rad/s
    pub gyro: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImuBias {
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// Measurement noise and bias random-walk densities, SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseSpec {
    /// accelerometer white noise per sample, m/s^2
    pub sigma_na: f64,
    /// gyroscope white noise per sample, rad/s
    pub sigma_ng: f64,
    /// accelerometer bias random walk, m/s^2 per sqrt(s)
    pub sigma_ba_walk: f64,
    /// gyroscope bias random walk, rad/s per sqrt(s)
    pub sigma_bg_walk: f64,
}

impl ImuNoiseSpec {
    pub const fn zero() -> Self {
        Self {
            sigma_na: 0.0,
            sigma_ng: 0.0,
            sigma_ba_walk: 0.0,
            sigma_bg_walk: 0.0,
        }
    }

    /// Low-cost IMU: 0.25 m/s^2 and 0.26 deg/s white noise.
    pub fn low_cost() -> Self {
        Self {
            sigma_na: 0.25,
            sigma_ng: 0.26_f64.to_radians(),
            sigma_ba_walk: 1e-4,
            sigma_bg_walk: 1e-5,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.sigma_na, self.sigma_ng, self.sigma_ba_walk, self.sigma_bg_walk]
            .iter()
            .all(|s| s.is_finite() && *s >= 0.0)
    }
}

impl Default for ImuNoiseSpec {
    fn default() -> Self {
        Self::low_cost()
    }
}

/// Kinematics recovered from one IMU sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mechanized {
    pub world_accel: Vector3<f64>,
    pub body_rate: Vector3<f64>,
}

/// `a_W = R(q)(a_m - b_a) + g_W`, `w = g_m - b_g`, with `q = world_from_imu`.
pub fn mechanize(
    q: &Quaternion,
    sample: &ImuSample,
    bias: &ImuBias,
    gravity: &Vector3<f64>,
) -> Mechanized {
    Mechanized {
        world_accel: q.rotation_matrix() * (sample.accel - bias.accel) + gravity,
        body_rate: sample.gyro - bias.gyro,
    }
}

fn normal3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    let mut draw = || -> f64 { StandardNormal.sample(rng) };
    Vector3::new(draw(), draw(), draw()) * sigma
}

/// Inverse of [`mechanize`] with i.i.d. per-axis white noise.
#[allow(clippy::too_many_arguments)]
pub fn synthesize<R: Rng + ?Sized>(
    t: f64,
    true_world_accel: &Vector3<f64>,
    true_body_rate: &Vector3<f64>,
    q: &Quaternion,
    bias: &ImuBias,
    gravity: &Vector3<f64>,
    noise: &ImuNoiseSpec,
    rng: &mut R,
) -> ImuSample {
    let accel = q.rotation_matrix().transpose() * (true_world_accel - gravity)
        + bias.accel
        + normal3(rng, noise.sigma_na);
    let gyro = true_body_rate + bias.gyro + normal3(rng, noise.sigma_ng);
    ImuSample { t, accel, gyro }
}

/// Brownian bias transition. The mean is unchanged; with an rng a random-walk
/// increment `N(0, sigma^2 dt)` per axis is added.
pub fn propagate_bias<R: Rng + ?Sized>(
    bias: &ImuBias,
    dt: f64,
    walk: &ImuNoiseSpec,
    rng: Option<&mut R>,
) -> ImuBias {
    let Some(rng) = rng else {
        return *bias;
    };
    let dt = dt.max(0.0);
    ImuBias {
        accel: bias.accel + normal3(rng, walk.sigma_ba_walk * dt.sqrt()),
        gyro: bias.gyro + normal3(rng, walk.sigma_bg_walk * dt.sqrt()),
    }
}

/// Adds i.i.d. white noise to every sample. The input is left untouched.
pub fn add_white_noise<R: Rng + ?Sized>(
    stream: &[ImuSample],
    noise: &ImuNoiseSpec,
    rng: &mut R,
) -> Vec<ImuSample> {
    stream
        .iter()
        .map(|s| ImuSample {
            t: s.t,
            accel: s.accel + normal3(rng, noise.sigma_na),
            gyro: s.gyro + normal3(rng, noise.sigma_ng),
        })
        .collect()
}
