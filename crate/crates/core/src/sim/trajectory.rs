use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{Quaternion, RigidPose};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    #[default]
    Straight,
    SCurve,
    Turn,
    Circuit,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "straight" => Ok(Self::Straight),
            "s-curve" => Ok(Self::SCurve),
            "turn" => Ok(Self::Turn),
            "circuit" => Ok(Self::Circuit),
            other => Err(crate::Error::Config(format!("unknown trajectory kind '{other}'"))),
        }
    }
}

/// Planar path shape parameters, m.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathShape {
    pub s_curve_amplitude: f64,
    pub s_curve_wavelength: f64,
    pub turn_radius: f64,
    pub circuit_semi_major: f64,
    pub circuit_semi_minor: f64,
    /// IMU height above the ground plane
    pub height: f64,
}

impl Default for PathShape {
    fn default() -> Self {
        Self {
            s_curve_amplitude: 8.0,
            s_curve_wavelength: 150.0,
            turn_radius: 120.0,
            circuit_semi_major: 120.0,
            circuit_semi_minor: 60.0,
            height: 1.0,
        }
    }
}

/// Speed `v0 (1 + m sin(2 pi t / T))`, m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeedProfile {
    pub mean: f64,
    /// relative amplitude `m`, below 1
    pub modulation: f64,
    pub period: f64,
}

impl Default for SpeedProfile {
    fn default() -> Self {
        Self {
            mean: 10.0,
            modulation: 0.1,
            period: 12.0,
        }
    }
}

impl SpeedProfile {
    /// `(s, s_dot, s_ddot)` of the path parameter.
    pub fn progress(&self, t: f64) -> (f64, f64, f64) {
        let w = TAU / self.period;
        let (v0, m) = (self.mean, self.modulation);
        let s = v0 * (t + m / w * (1.0 - (w * t).cos()));
        let sd = v0 * (1.0 + m * (w * t).sin());
        let sdd = v0 * m * w * (w * t).cos();
        (s, sd, sdd)
    }
}

/// Ground-truth kinematics at one instant; the IMU frame is
/// forward-left-up with yaw following the heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub t: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub orientation: Quaternion,
    /// body angular rate, rad/s
    pub body_rate: Vector3<f64>,
}

impl Kinematics {
    pub fn pose(&self) -> RigidPose {
        RigidPose::new(self.orientation, self.position)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub shape: PathShape,
    pub speed: SpeedProfile,
}

impl Trajectory {
    /// Path point and its first two derivatives in the parameter `s`.
    pub fn path(&self, s: f64) -> (Vector2<f64>, Vector2<f64>, Vector2<f64>) {
        let sh = &self.shape;
        match self.kind {
            TrajectoryKind::Straight => (Vector2::new(s, 0.0), Vector2::new(1.0, 0.0), Vector2::zeros()),
            TrajectoryKind::SCurve => {
                let k = TAU / sh.s_curve_wavelength;
                let a = sh.s_curve_amplitude;
                (
                    Vector2::new(s, a * (k * s).sin()),
                    Vector2::new(1.0, a * k * (k * s).cos()),
                    Vector2::new(0.0, -a * k * k * (k * s).sin()),
                )
            }
            TrajectoryKind::Turn => {
                let r = sh.turn_radius;
                let th = s / r;
                (
                    Vector2::new(r * th.sin(), r * (1.0 - th.cos())),
                    Vector2::new(th.cos(), th.sin()),
                    Vector2::new(-th.sin(), th.cos()) / r,
                )
            }
            TrajectoryKind::Circuit => {
                let (a, b) = (sh.circuit_semi_major, sh.circuit_semi_minor);
                let rho = 0.5 * (a + b);
                let th = s / rho;
                (
                    Vector2::new(a * th.sin(), b * (1.0 - th.cos())),
                    Vector2::new(a * th.cos(), b * th.sin()) / rho,
                    Vector2::new(-a * th.sin(), b * th.cos()) / (rho * rho),
                )
            }
        }
    }

    pub fn at(&self, t: f64) -> Kinematics {
        let (s, sd, sdd) = self.speed.progress(t);
        let (r, d1, d2) = self.path(s);
        let vel = d1 * sd;
        let acc = d2 * sd * sd + d1 * sdd;
        let yaw = d1.y.atan2(d1.x);
        let yaw_rate = (d1.x * d2.y - d1.y * d2.x) / d1.norm_squared() * sd;
        Kinematics {
            t,
            position: Vector3::new(r.x, r.y, self.shape.height),
            velocity: Vector3::new(vel.x, vel.y, 0.0),
            acceleration: Vector3::new(acc.x, acc.y, 0.0),
            orientation: Quaternion::from_axis_angle(&Vector3::z(), yaw),
            body_rate: Vector3::new(0.0, 0.0, yaw_rate),
        }
    }

    /// Ground point and unit left normal at path parameter `s`.
    pub fn frame_at(&self, s: f64) -> (Vector2<f64>, Vector2<f64>) {
        let (r, d1, _) = self.path(s);
        let t = d1.normalize();
        (r, Vector2::new(-t.y, t.x))
    }

    pub fn progress(&self, t: f64) -> f64 {
        self.speed.progress(t).0
    }
}
