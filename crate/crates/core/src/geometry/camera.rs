use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::RigidPose;
use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    /// KITTI-like default geometry (1242 x 375 image).
    pub fn kitti_like() -> Self {
        Self {
            fx: 721.5,
            fy: 721.5,
            cx: 609.6,
            cy: 172.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Unit bearing of a pixel in the camera frame (z forward).
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx,
            (pixel.y - self.cy) / self.fy,
            1.0,
        )
        .normalize()
    }

    /// Pixel of a camera-frame point; `None` at zero depth.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z == 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }
}

/// Image line `a u + b v + c = 0` in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageLine(pub Vector3<f64>);

impl ImageLine {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if a == 0.0 && b == 0.0 {
            return Err(Error::InvalidInput("image line with a = b = 0".into()));
        }
        Ok(Self(Vector3::new(a, b, c)))
    }

    pub fn coefficients(&self) -> Vector3<f64> {
        self.0
    }

    /// Signed residual `l . (u, v, 1)`.
    pub fn evaluate(&self, pixel: &Vector2<f64>) -> f64 {
        self.0.x * pixel.x + self.0.y * pixel.y + self.0.z
    }
}

/// Line through `f2` whose normal is the given epipolar-line direction, i.e.
/// the line perpendicular to the epipolar line at `f2`.
///
/// When the direction is numerically undefined (the match sits on the
/// epipole) the vertical line `u = f2.u` is returned.
pub fn choose_line(f2: &Vector2<f64>, epipolar_direction: &Vector2<f64>) -> ImageLine {
    let n = epipolar_direction.norm();
    let normal = if n > 1e-12 && n.is_finite() {
        epipolar_direction / n
    } else {
        Vector2::new(1.0, 0.0)
    };
    ImageLine(Vector3::new(
        normal.x,
        normal.y,
        -(normal.x * f2.x + normal.y * f2.y),
    ))
}

/// Camera projection `x ~ P X` for homogeneous world points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub pixel: Vector2<f64>,
    /// Camera-frame z; negative when the point is behind the camera.
    pub depth: f64,
}

impl Projected {
    pub fn in_front(&self) -> bool {
        self.depth > 0.0
    }
}

impl ProjectionMatrix {
    /// `K [R^T | -R^T c]` for a camera with pose `world_from_camera = (R, c)`.
    pub fn from_pose(world_from_camera: &RigidPose, k: &CameraIntrinsics) -> Self {
        Self::from_camera_from_world(&world_from_camera.inverse(), &k.matrix())
    }

    /// `[R^T | -R^T c]`, the projection in normalized image coordinates.
    pub fn normalized(world_from_camera: &RigidPose) -> Self {
        Self::from_camera_from_world(&world_from_camera.inverse(), &Matrix3::identity())
    }

    fn from_camera_from_world(cam_from_world: &RigidPose, k: &Matrix3<f64>) -> Self {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&cam_from_world.rotation_matrix());
        rt.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&cam_from_world.translation);
        Self(k * rt)
    }

    /// Column `j` (0-based) of the matrix.
    pub fn column(&self, j: usize) -> Vector3<f64> {
        self.0.column(j).into_owned()
    }

    pub fn left_block(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn project(&self, p_world: &Vector3<f64>) -> Projected {
        let x = self.0 * Vector4::new(p_world.x, p_world.y, p_world.z, 1.0);
        // the third row of K[R|t] carries camera-frame depth when K has last row (0,0,1)
        Projected {
            pixel: Vector2::new(x.x / x.z, x.y / x.z),
            depth: x.z,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0 * s)
    }
}

/// Projection matrix of a camera with pose `world_from_camera`.
pub fn build_projection(world_from_camera: &RigidPose, k: &CameraIntrinsics) -> ProjectionMatrix {
    ProjectionMatrix::from_pose(world_from_camera, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::kitti_like()
    }

    #[test]
    fn rejects_non_positive_focal() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn optical_axis_point_hits_principal_point() {
        let p = build_projection(&RigidPose::identity(), &k());
        let out = p.project(&Vector3::new(0.0, 0.0, 5.0));
        assert!(out.in_front());
        assert!((out.pixel - Vector2::new(k().cx, k().cy)).norm() < 1e-12);
    }

    #[test]
    fn translated_camera_shifts_left_by_fx_over_depth() {
        let pose = RigidPose::new(Quaternion::IDENTITY, Vector3::new(1.0, 0.0, 0.0));
        let out = build_projection(&pose, &k()).project(&Vector3::new(0.0, 0.0, 5.0));
        // camera-frame point is (-1, 0, 5): u = cx - fx / 5
        assert!((out.pixel.x - (k().cx - k().fx / 5.0)).abs() < 1e-9);
        assert!((out.pixel.y - k().cy).abs() < 1e-12);
    }

    #[test]
    fn point_behind_camera_has_negative_depth() {
        let out = build_projection(&RigidPose::identity(), &k()).project(&Vector3::new(0.3, 0.1, -4.0));
        assert!(!out.in_front());
        assert!(out.depth < 0.0);
    }

    #[test]
    fn choose_line_examples() {
        let l = choose_line(&Vector2::new(100.0, 50.0), &Vector2::new(1.0, 0.0));
        assert_eq!(l.coefficients(), Vector3::new(1.0, 0.0, -100.0));
        let l = choose_line(&Vector2::new(0.0, 0.0), &Vector2::new(0.0, 1.0));
        assert_eq!(l.coefficients(), Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn choose_line_passes_through_point() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let f2 = Vector2::new(rng.random_range(-2000.0..2000.0), rng.random_range(-2000.0..2000.0));
            let d = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let l = choose_line(&f2, &d);
            assert!(l.evaluate(&f2).abs() < 1e-12 * (1.0 + f2.norm()));
            // the line is perpendicular to the epipolar direction
            let dir = Vector2::new(-l.0.y, l.0.x);
            assert!(dir.dot(&d).abs() < 1e-12);
        }
    }

    #[test]
    fn choose_line_falls_back_to_vertical() {
        let l = choose_line(&Vector2::new(10.0, 20.0), &Vector2::zeros());
        assert_eq!(l.coefficients(), Vector3::new(1.0, 0.0, -10.0));
    }
}
