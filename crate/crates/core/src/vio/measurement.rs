use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Vector2, Vector3};

use super::config::VioConfig;
use super::state::VioState;
use super::config::TrackNoise;
use crate::error::{Error, Result};
use crate::geometry::{
    choose_line, epipolar_direction, ImageLine, ProjectionMatrix, RigidPose, TrifocalTensor,
};
use crate::tracks::FeatureTriple;

/// `world_from_camera` of the three window views.
pub fn camera_poses(x: &VioState, extrinsics: &RigidPose) -> [RigidPose; 3] {
    [
        x.pose1().compose(extrinsics),
        x.pose2().compose(extrinsics),
        x.pose3().compose(extrinsics),
    ]
}

/// Trifocal tensor of the window in normalized camera coordinates.
pub fn window_tensor(x: &VioState, cfg: &VioConfig) -> Result<TrifocalTensor> {
    let [c1, c2, c3] = camera_poses(x, &cfg.extrinsics);
    TrifocalTensor::from_projections(
        &ProjectionMatrix::normalized(&c1),
        &ProjectionMatrix::normalized(&c2),
        &ProjectionMatrix::normalized(&c3),
    )
}

/// Line through `f2` perpendicular to its epipolar line under `tensor`.
pub fn transfer_line(tensor: &TrifocalTensor, f2: &Vector2<f64>, cfg: &VioConfig) -> ImageLine {
    let e2 = tensor.epipole_pixels(&cfg.intrinsics);
    choose_line(f2, &epipolar_direction(f2, &e2))
}

/// Stacked point-line-point transfer model for a fixed set of features.
///
/// The lines `l2` are chosen once, at the state the model is built from, and
/// then held fixed while the model is evaluated at other states.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    pub features: Vec<FeatureTriple>,
    pub lines: Vec<ImageLine>,
    /// per-feature measurement noise, px^2
    pub noise: Vec<Matrix2<f64>>,
    /// features rejected because their transfer was degenerate
    pub dropped: usize,
}

impl MeasurementModel {
    pub fn build(x: &VioState, features: &[FeatureTriple], cfg: &VioConfig) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidInput("measurement model needs at least one feature".into()));
        }
        let tensor = window_tensor(x, cfg)?;
        if tensor.is_degenerate() {
            return Err(Error::DegenerateGeometry(format!(
                "window tensor norm {:e}",
                tensor.frobenius_norm()
            )));
        }
        let mut kept = Vec::with_capacity(features.len());
        let mut lines = Vec::with_capacity(features.len());
        for f in features {
            let l2 = transfer_line(&tensor, &f.f2, cfg);
            let f3 = Vector3::new(f.f3.x, f.f3.y, 1.0);
            match tensor.transfer_point(&f3, &l2, &cfg.intrinsics) {
                Ok(p) if p.iter().all(|v| v.is_finite()) => {
                    kept.push(*f);
                    lines.push(l2);
                }
                _ => {}
            }
        }
        let dropped = features.len() - kept.len();
        let noise = kept.iter().map(|f| track_noise_block(&tensor, f, cfg)).collect();
        Ok(Self {
            features: kept,
            lines,
            noise,
            dropped,
        })
    }

    /// Block-diagonal measurement noise of the stacked model.
    pub fn noise_matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.dim(), self.dim());
        for (m, n) in self.noise.iter().enumerate() {
            r.fixed_view_mut::<2, 2>(2 * m, 2 * m).copy_from(n);
        }
        r
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        2 * self.features.len()
    }

    /// Stacked measured pixels `[u_1, v_1, ..., u_M, v_M]` in the newest view.
    pub fn measurement(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.features.iter().flat_map(|f| [f.f1.x, f.f1.y]),
        )
    }

    /// Transferred pixels at state `x`.
    pub fn predict(&self, x: &VioState, cfg: &VioConfig) -> Result<DVector<f64>> {
        let tensor = window_tensor(x, cfg)?;
        let mut out = DVector::zeros(self.dim());
        for (m, (f, l2)) in self.features.iter().zip(&self.lines).enumerate() {
            let f3 = Vector3::new(f.f3.x, f.f3.y, 1.0);
            let p = tensor.transfer_point(&f3, l2, &cfg.intrinsics)?;
            out[2 * m] = p.x;
            out[2 * m + 1] = p.y;
        }
        Ok(out)
    }

    /// [`Self::predict`] on a packed state; failures become NaN so the filter
    /// reports them as a numerical error.
    pub fn predict_vector(&self, x: &DVector<f64>, cfg: &VioConfig) -> DVector<f64> {
        match self.predict(&VioState::unpack_unchecked(x), cfg) {
            Ok(y) => y,
            Err(_) => DVector::from_element(self.dim(), f64::NAN),
        }
    }
}

fn transfer_pixel(tensor: &TrifocalTensor, f2: &Vector2<f64>, f3: &Vector2<f64>, cfg: &VioConfig) -> Option<Vector2<f64>> {
    let l2 = transfer_line(tensor, f2, cfg);
    let p = tensor
        .transfer_point(&Vector3::new(f3.x, f3.y, 1.0), &l2, &cfg.intrinsics)
        .ok()?;
    p.iter().all(|v| v.is_finite()).then_some(p)
}

/// Noise block of one feature: `sigma_px^2 I`, plus the older-view noise
/// pushed through the transfer (symmetric differences at `sqrt(3) sigma`)
/// when the config asks for it.
fn track_noise_block(tensor: &TrifocalTensor, f: &FeatureTriple, cfg: &VioConfig) -> Matrix2<f64> {
    let s2 = cfg.sigma_px.powi(2);
    let plain = Matrix2::identity() * s2;
    if cfg.track_noise == TrackNoise::Ignore {
        return plain;
    }
    let step = 3f64.sqrt() * cfg.sigma_px;
    let mut jac = Matrix2x4::zeros();
    for k in 0..4 {
        let eval = |sign: f64| {
            let (f2, f3) = shifted_tracks(f, k, sign * step);
            transfer_pixel(tensor, &f2, &f3, cfg)
        };
        let (Some(hp), Some(hm)) = (eval(1.0), eval(-1.0)) else {
            return plain;
        };
        jac.set_column(k, &((hp - hm) / (2.0 * step)));
    }
    plain + jac * jac.transpose() * s2
}

/// `(f2, f3)` with coordinate `k` of `[f2.u, f2.v, f3.u, f3.v]` moved by `shift`.
fn shifted_tracks(f: &FeatureTriple, k: usize, shift: f64) -> (Vector2<f64>, Vector2<f64>) {
    let (mut f2, mut f3) = (f.f2, f.f3);
    if k < 2 {
        f2[k] += shift;
    } else {
        f3[k - 2] += shift;
    }
    (f2, f3)
}

/// Predicted measurement and the model that produced it.
#[derive(Clone, Debug)]
pub struct StackedPrediction {
    pub predicted: DVector<f64>,
    pub model: MeasurementModel,
}

/// Builds the model at `x` and evaluates it there.
pub fn stack_measurement_model(
    x: &VioState,
    features: &[FeatureTriple],
    cfg: &VioConfig,
) -> Result<StackedPrediction> {
    let model = MeasurementModel::build(x, features, cfg)?;
    let predicted = model.predict(x, cfg)?;
    Ok(StackedPrediction { predicted, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;

    fn scene() -> (VioState, Vec<Vector3<f64>>, VioConfig) {
        let cfg = VioConfig::default();
        let q = Quaternion::from_euler(0.0, 0.0, 0.05);
        let mut x = VioState::at_rest(&RigidPose::new(q, Vector3::new(2.0, 0.1, 0.0)), Vector3::new(10.0, 0.0, 0.0));
        x.p2 = Vector3::new(1.0, 0.0, 0.0);
        x.q2 = Quaternion::from_euler(0.0, 0.0, 0.02);
        x.p3 = Vector3::zeros();
        x.q3 = Quaternion::IDENTITY;
        let pts = vec![
            Vector3::new(20.0, 5.0, 1.0),
            Vector3::new(30.0, -6.0, 2.5),
            Vector3::new(15.0, 4.0, -1.0),
            Vector3::new(80.0, 0.5, 1.5),
            Vector3::new(12.0, -5.0, 0.5),
        ];
        (x, pts, cfg)
    }

    fn observe(x: &VioState, pts: &[Vector3<f64>], cfg: &VioConfig) -> Vec<FeatureTriple> {
        let [c1, c2, c3] = camera_poses(x, &cfg.extrinsics);
        let k = &cfg.intrinsics;
        pts.iter()
            .enumerate()
            .map(|(i, p)| {
                let px = |c: &RigidPose| ProjectionMatrix::from_pose(c, k).project(p).pixel;
                FeatureTriple {
                    track_id: i as u64,
                    f1: px(&c1),
                    f2: px(&c2),
                    f3: px(&c3),
                    age: 3,
                }
            })
            .collect()
    }

    #[test]
    fn ground_truth_prediction_matches_measurement() {
        let (x, pts, cfg) = scene();
        let fs = observe(&x, &pts, &cfg);
        let s = stack_measurement_model(&x, &fs, &cfg).unwrap();
        assert_eq!(s.model.dropped, 0);
        let err = (&s.predicted - s.model.measurement()).abs().max();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn lateral_offset_gives_innovation() {
        let (x, pts, cfg) = scene();
        let fs = observe(&x, &pts, &cfg);
        let mut moved = x;
        moved.p1 += Vector3::new(0.0, 0.1, 0.0);
        let s = stack_measurement_model(&moved, &fs, &cfg).unwrap();
        let innov = &s.model.measurement() - &s.predicted;
        for m in 0..fs.len() {
            let r = (innov[2 * m].powi(2) + innov[2 * m + 1].powi(2)).sqrt();
            assert!(r > 0.1, "feature {m}: {r}");
        }
    }

    #[test]
    fn empty_feature_set_is_an_error() {
        let (x, _, cfg) = scene();
        assert!(stack_measurement_model(&x, &[], &cfg).is_err());
    }

    #[test]
    fn stationary_window_is_degenerate() {
        let (mut x, pts, cfg) = scene();
        let fs = observe(&x, &pts, &cfg);
        x.p2 = x.p1;
        x.p3 = x.p1;
        x.q2 = x.q1;
        x.q3 = x.q1;
        assert!(MeasurementModel::build(&x, &fs, &cfg).is_err());
    }

    #[test]
    fn ignore_keeps_isotropic_noise() {
        let (x, pts, cfg) = scene();
        let fs = observe(&x, &pts, &cfg);
        let m = MeasurementModel::build(&x, &fs, &cfg).unwrap();
        assert_eq!(m.noise_matrix(), DMatrix::identity(m.dim(), m.dim()) * cfg.sigma_px.powi(2));
    }

    #[test]
    fn propagated_noise_matches_sampling_off_epipole() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let (x, pts, mut cfg) = scene();
        cfg.track_noise = TrackNoise::Covariance;
        let fs = observe(&x, &pts, &cfg);
        let m = MeasurementModel::build(&x, &fs, &cfg).unwrap();
        let tensor = window_tensor(&x, &cfg).unwrap();
        let noise = Normal::new(0.0, cfg.sigma_px).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        let trace = |i: usize| m.noise[i].trace();
        assert!((0..fs.len()).filter(|&i| i != 3).all(|i| trace(i) < trace(3)));
        // feature 3 sits next to the epipole, where the transfer is far from linear
        for (i, f) in fs.iter().enumerate().filter(|(i, _)| *i != 3) {
            let draws: Vec<Vector2<f64>> = (0..n)
                .map(|_| {
                    let mut g = || Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                    let (d2, d3) = (g(), g());
                    transfer_pixel(&tensor, &(f.f2 + d2), &(f.f3 + d3), &cfg).unwrap()
                })
                .collect();
            let mean = draws.iter().sum::<Vector2<f64>>() / n as f64;
            let cov = draws.iter().map(|d| (d - mean) * (d - mean).transpose()).sum::<Matrix2<f64>>() / (n - 1) as f64;
            let expected = m.noise[i] - Matrix2::identity() * cfg.sigma_px.powi(2);
            let rel = (cov - expected).norm() / expected.norm();
            assert!(rel < 0.05, "feature {i}: {rel}");
        }
    }
}
