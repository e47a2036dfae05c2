use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::Quaternion;

/// Rigid transform `A_from_B`: `x_A = R x_B + t`.
///
/// Frames are carried by naming (`world_from_imu`, `imu_from_camera`, ...);
/// composition follows `a_from_c = a_from_b.compose(&b_from_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quaternion::IDENTITY, Vector3::zeros())
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        Self::new(
            Quaternion::from_dcm(&r),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.rotation_matrix()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose::new(
            (self.rotation * other.rotation).normalize(),
            self.rotation_matrix() * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidPose {
        let inv = self.rotation.conjugate().normalize();
        RigidPose::new(inv, -(inv.rotation_matrix() * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }
}
