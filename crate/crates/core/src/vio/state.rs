use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, RigidPose, UNIT_TOLERANCE};
use crate::imu::ImuBias;

pub const STATE_DIM: usize = 30;
pub const P1: usize = 0;
pub const V: usize = 3;
pub const Q1: usize = 6;
pub const BA: usize = 10;
pub const BG: usize = 13;
pub const P2: usize = 16;
pub const Q2: usize = 19;
pub const P3: usize = 23;
pub const Q3: usize = 26;
/// Offsets of the three quaternion blocks.
pub const QUATERNION_BLOCKS: [usize; 3] = [Q1, Q2, Q3];

/// Sliding-window state: the newest IMU pose, velocity and biases plus the
/// two previous poses, all `world_from_imu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VioState {
    pub p1: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q1: Quaternion,
    pub ba: Vector3<f64>,
    pub bg: Vector3<f64>,
    pub p2: Vector3<f64>,
    pub q2: Quaternion,
    pub p3: Vector3<f64>,
    pub q3: Quaternion,
}

fn v3(x: &DVector<f64>, at: usize) -> Vector3<f64> {
    Vector3::new(x[at], x[at + 1], x[at + 2])
}

fn q4(x: &DVector<f64>, at: usize) -> Quaternion {
    Quaternion::new(x[at], x[at + 1], x[at + 2], x[at + 3])
}

impl VioState {
    /// All three window poses at `pose`, zero biases.
    pub fn at_rest(pose: &RigidPose, v: Vector3<f64>) -> Self {
        Self {
            p1: pose.translation,
            v,
            q1: pose.rotation,
            ba: Vector3::zeros(),
            bg: Vector3::zeros(),
            p2: pose.translation,
            q2: pose.rotation,
            p3: pose.translation,
            q3: pose.rotation,
        }
    }

    pub fn pack(&self) -> DVector<f64> {
        let mut x = DVector::zeros(STATE_DIM);
        let put3 = |x: &mut DVector<f64>, at: usize, v: &Vector3<f64>| {
            x.rows_mut(at, 3).copy_from(v);
        };
        let put4 = |x: &mut DVector<f64>, at: usize, q: &Quaternion| {
            x.rows_mut(at, 4).copy_from_slice(&q.to_array());
        };
        put3(&mut x, P1, &self.p1);
        put3(&mut x, V, &self.v);
        put4(&mut x, Q1, &self.q1);
        put3(&mut x, BA, &self.ba);
        put3(&mut x, BG, &self.bg);
        put3(&mut x, P2, &self.p2);
        put4(&mut x, Q2, &self.q2);
        put3(&mut x, P3, &self.p3);
        put4(&mut x, Q3, &self.q3);
        x
    }

    pub fn unpack(x: &DVector<f64>) -> Result<Self> {
        if x.len() != STATE_DIM {
            return Err(Error::InvalidInput(format!(
                "state vector has {} entries, expected {STATE_DIM}",
                x.len()
            )));
        }
        Ok(Self::unpack_unchecked(x))
    }

    pub(crate) fn unpack_unchecked(x: &DVector<f64>) -> Self {
        Self {
            p1: v3(x, P1),
            v: v3(x, V),
            q1: q4(x, Q1),
            ba: v3(x, BA),
            bg: v3(x, BG),
            p2: v3(x, P2),
            q2: q4(x, Q2),
            p3: v3(x, P3),
            q3: q4(x, Q3),
        }
    }

    pub fn bias(&self) -> ImuBias {
        ImuBias {
            accel: self.ba,
            gyro: self.bg,
        }
    }

    /// Newest pose, `world_from_imu`.
    pub fn pose1(&self) -> RigidPose {
        RigidPose::new(self.q1, self.p1)
    }

    pub fn pose2(&self) -> RigidPose {
        RigidPose::new(self.q2, self.p2)
    }

    pub fn pose3(&self) -> RigidPose {
        RigidPose::new(self.q3, self.p3)
    }

    /// Largest deviation of the three quaternion norms from one.
    pub fn max_quaternion_defect(&self) -> f64 {
        [self.q1, self.q2, self.q3]
            .iter()
            .map(|q| (q.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn quaternions_are_unit(&self) -> bool {
        self.max_quaternion_defect() <= UNIT_TOLERANCE
    }
}
