use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use super::{CameraIntrinsics, ImageLine, ProjectionMatrix};
use crate::error::{Error, Result};

/// Frobenius norm under which a tensor is treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Homogeneous scale under which a transferred point is rejected.
pub const TRANSFER_MIN_SCALE: f64 = 1e-12;

/// Trifocal tensor of three views, stored as three 3x3 slices.
///
/// The views play fixed roles: view 3 carries the point, view 2 the line and
/// view 1 is the view the point is transferred into. Before building the
/// slices the cameras are re-expressed so that view 3 is `[I | 0]`; with
/// `a = P2 H`, `b = P1 H`,
///
/// ```text
/// T_j = a_j b_4^T - a_4 b_j^T          (j = 1, 2, 3)
/// x_1 ~ (sum_j x_3^j T_j^T) l_2
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrifocalTensor {
    pub slices: [Matrix3<f64>; 3],
    /// Epipole of view 3 in view 2 (homogeneous, canonical frame).
    pub epipole_in_view2: Vector3<f64>,
}

impl TrifocalTensor {
    pub fn from_projections(
        p1: &ProjectionMatrix,
        p2: &ProjectionMatrix,
        p3: &ProjectionMatrix,
    ) -> Result<Self> {
        let m = p3.left_block();
        let scale = m.norm();
        if !scale.is_finite() || scale == 0.0 || m.determinant().abs() < 1e-12 * scale.powi(3) {
            return Err(Error::DegenerateGeometry(
                "third projection has a rank-deficient left block".into(),
            ));
        }
        let m_inv = m
            .try_inverse()
            .ok_or_else(|| Error::DegenerateGeometry("third projection not invertible".into()))?;
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&m_inv);
        h.fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(-(m_inv * p3.column(3))));
        let a = p2.0 * h;
        let b = p1.0 * h;
        let a4: Vector3<f64> = a.column(3).into_owned();
        let b4: Vector3<f64> = b.column(3).into_owned();
        let slice = |j: usize| {
            let aj: Vector3<f64> = a.column(j).into_owned();
            let bj: Vector3<f64> = b.column(j).into_owned();
            aj * b4.transpose() - a4 * bj.transpose()
        };
        Ok(Self {
            slices: [slice(0), slice(1), slice(2)],
            epipole_in_view2: a4,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.slices.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.frobenius_norm() >= DEGENERATE_NORM)
    }

    /// Contraction `(sum_j x3^j T_j^T) l2` in whatever coordinates the tensor
    /// was built in.
    pub fn contract(&self, x3: &Vector3<f64>, l2: &Vector3<f64>) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for j in 0..3 {
            out += x3[j] * (self.slices[j].transpose() * l2);
        }
        out
    }

    /// Point-line-point transfer into view 1.
    ///
    /// The tensor is expected in normalized camera coordinates (built from
    /// `[R | t]` projections); `f3` and `l2` are in pixels and are mapped
    /// through `k` before contraction, the result is mapped back to pixels.
    pub fn transfer_point(
        &self,
        f3: &Vector3<f64>,
        l2: &ImageLine,
        k: &CameraIntrinsics,
    ) -> Result<Vector2<f64>> {
        let norm = self.frobenius_norm();
        if !(norm >= DEGENERATE_NORM) {
            return Err(Error::DegenerateGeometry(format!(
                "trifocal tensor norm {norm:e} below {DEGENERATE_NORM:e}"
            )));
        }
        let x3 = k.inverse_matrix() * f3;
        let l2n = k.matrix().transpose() * l2.coefficients();
        let (x3n, l2nn) = (x3.norm(), l2n.norm());
        if x3n == 0.0 || l2nn == 0.0 {
            return Err(Error::TransferDegenerate { scale: 0.0 });
        }
        let x1 = self.contract(&(x3 / x3n), &(l2n / l2nn)) / norm;
        let scale = x1.z;
        if !(scale.abs() >= TRANSFER_MIN_SCALE) {
            return Err(Error::TransferDegenerate { scale });
        }
        let px = k.matrix() * (x1 / scale);
        Ok(Vector2::new(px.x, px.y))
    }

    /// Epipole of view 3 in view 2, in pixels (homogeneous).
    pub fn epipole_pixels(&self, k: &CameraIntrinsics) -> Vector3<f64> {
        k.matrix() * self.epipole_in_view2
    }
}

/// Direction of the epipolar line through pixel `x2` and the (homogeneous)
/// epipole `e2`. Returns zero when `x2` coincides with the epipole.
pub fn epipolar_direction(x2: &Vector2<f64>, e2: &Vector3<f64>) -> Vector2<f64> {
    let xh = Vector3::new(x2.x, x2.y, 1.0);
    let (xn, en) = (xh.norm(), e2.norm());
    if en == 0.0 {
        return Vector2::zeros();
    }
    let l = (xh / xn).cross(&(e2 / en));
    let d = Vector2::new(l.y, -l.x);
    if d.norm() < 1e-12 {
        Vector2::zeros()
    } else {
        d
    }
}

/// Builds the tensor from three projections.
pub fn trifocal_from_projections(
    p1: &ProjectionMatrix,
    p2: &ProjectionMatrix,
    p3: &ProjectionMatrix,
) -> Result<TrifocalTensor> {
    TrifocalTensor::from_projections(p1, p2, p3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{choose_line, Quaternion, RigidPose};
    use nalgebra::Matrix3x4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical(t: Vector3<f64>) -> ProjectionMatrix {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        ProjectionMatrix(m)
    }

    #[test]
    fn canonical_slices_match_hand_expansion() {
        // P3 = [I|0], P2 = [I|e1], P1 = [I|e3]
        // T_j = e_j e3^T - e1 e_j^T
        let t = TrifocalTensor::from_projections(
            &canonical(Vector3::z()),
            &canonical(Vector3::x()),
            &canonical(Vector3::zeros()),
        )
        .unwrap();
        let expected = [
            Matrix3::new(-1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
            Matrix3::new(0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0),
        ];
        for (j, (got, want)) in t.slices.iter().zip(&expected).enumerate() {
            assert_eq!(got, want, "slice {j}");
        }
        assert_eq!(t.epipole_in_view2, Vector3::x());
    }

    #[test]
    fn zero_baseline_gives_zero_tensor() {
        let p = canonical(Vector3::zeros());
        let t = TrifocalTensor::from_projections(&p, &p, &p).unwrap();
        assert_eq!(t.frobenius_norm(), 0.0);
        assert!(t.is_degenerate());
        let k = CameraIntrinsics::kitti_like();
        let l = ImageLine::new(1.0, 0.0, -600.0).unwrap();
        assert!(matches!(
            t.transfer_point(&Vector3::new(600.0, 170.0, 1.0), &l, &k),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn rank_deficient_third_view_rejected() {
        let p = canonical(Vector3::zeros());
        let mut bad = Matrix3x4::zeros();
        bad[(0, 0)] = 1.0;
        bad[(1, 1)] = 1.0;
        let err = TrifocalTensor::from_projections(&p, &p, &ProjectionMatrix(bad)).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    struct Rig {
        poses: [RigidPose; 3],
        point: Vector3<f64>,
    }

    fn random_rig(rng: &mut ChaCha8Rng) -> Rig {
        let pose = |rng: &mut ChaCha8Rng| {
            RigidPose::new(
                Quaternion::from_euler(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                ),
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
            )
        };
        let poses = [pose(rng), pose(rng), pose(rng)];
        let point = Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(8.0..60.0),
        );
        Rig { poses, point }
    }

    #[test]
    fn transfer_reproduces_projection() {
        let k = CameraIntrinsics::kitti_like();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let rig = random_rig(&mut rng);
            let pk: Vec<_> = rig.poses.iter().map(|p| ProjectionMatrix::from_pose(p, &k)).collect();
            let pn: Vec<_> = rig.poses.iter().map(ProjectionMatrix::normalized).collect();
            let x: Vec<_> = pk.iter().map(|p| p.project(&rig.point).pixel).collect();
            let t = TrifocalTensor::from_projections(&pn[0], &pn[1], &pn[2]).unwrap();
            let dir = epipolar_direction(&x[1], &t.epipole_pixels(&k));
            let l2 = choose_line(&x[1], &dir);
            let got = t
                .transfer_point(&Vector3::new(x[2].x, x[2].y, 1.0), &l2, &k)
                .unwrap();
            worst = worst.max((got - x[0]).norm());
        }
        assert!(worst < 1e-9, "worst transfer error {worst:e}");
    }

    #[test]
    fn transfer_is_projectively_invariant() {
        let k = CameraIntrinsics::kitti_like();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let rig = random_rig(&mut rng);
        let pn: Vec<_> = rig.poses.iter().map(ProjectionMatrix::normalized).collect();
        let pk: Vec<_> = rig.poses.iter().map(|p| ProjectionMatrix::from_pose(p, &k)).collect();
        let x: Vec<_> = pk.iter().map(|p| p.project(&rig.point).pixel).collect();
        let t = TrifocalTensor::from_projections(&pn[0], &pn[1], &pn[2]).unwrap();
        let l2 = choose_line(&x[1], &epipolar_direction(&x[1], &t.epipole_pixels(&k)));
        let f3 = Vector3::new(x[2].x, x[2].y, 1.0);
        let base = t.transfer_point(&f3, &l2, &k).unwrap();
        let scaled_f3 = t.transfer_point(&(f3 * 7.0), &l2, &k).unwrap();
        let scaled_l2 = t
            .transfer_point(&f3, &ImageLine(l2.coefficients() * -3.5), &k)
            .unwrap();
        assert!((base - scaled_f3).norm() < 1e-12 * base.norm());
        assert!((base - scaled_l2).norm() < 1e-12 * base.norm());

        // uniform scaling of the projections scales the tensor only
        let ts = TrifocalTensor::from_projections(&pn[0].scaled(2.0), &pn[1].scaled(-3.0), &pn[2].scaled(0.5))
            .unwrap();
        let got = ts.transfer_point(&f3, &l2, &k).unwrap();
        assert!((got - base).norm() < 1e-9);
        let ratio = ts.slices[0][(0, 0)] / t.slices[0][(0, 0)];
        for j in 0..3 {
            assert!((ts.slices[j] - t.slices[j] * ratio).norm() < 1e-9 * ts.frobenius_norm());
        }
    }

    #[test]
    fn epipolar_line_as_l2_is_degenerate() {
        let k = CameraIntrinsics::kitti_like();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rig = random_rig(&mut rng);
        let pn: Vec<_> = rig.poses.iter().map(ProjectionMatrix::normalized).collect();
        let pk: Vec<_> = rig.poses.iter().map(|p| ProjectionMatrix::from_pose(p, &k)).collect();
        let x: Vec<_> = pk.iter().map(|p| p.project(&rig.point).pixel).collect();
        let t = TrifocalTensor::from_projections(&pn[0], &pn[1], &pn[2]).unwrap();
        // epipolar line of x3 in view 2 passes through x2 and the epipole
        let e2 = t.epipole_pixels(&k);
        let line = Vector3::new(x[1].x, x[1].y, 1.0).cross(&e2);
        let err = t
            .transfer_point(&Vector3::new(x[2].x, x[2].y, 1.0), &ImageLine(line), &k)
            .unwrap_err();
        assert!(matches!(err, Error::TransferDegenerate { .. }), "{err:?}");
    }
}
