use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::VioConfig;
use super::measurement::{transfer_line, window_tensor};
use super::state::VioState;
use crate::tracks::FeatureTriple;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatus {
    /// consensus from sampled hypotheses
    Consensus,
    /// no hypothesis reached the minimum inlier ratio; thresholded at the
    /// predicted state instead
    Fallback,
    /// fewer than three usable features; everything passed through
    Passthrough,
}

#[derive(Clone, Debug)]
pub struct RansacOutcome {
    pub inliers: Vec<FeatureTriple>,
    pub status: GateStatus,
    /// translation of the newest pose relative to the predicted state
    pub offset: Vector3<f64>,
}

/// Transfer of one feature as an affine function of a translation offset
/// `d` applied to the newest position: `x1(d) = c + J d` (homogeneous,
/// normalized camera coordinates).
struct AffineTransfer {
    c: Vector3<f64>,
    j: Matrix3<f64>,
    /// measured newest pixel in normalized coordinates
    z: Vector2<f64>,
}

impl AffineTransfer {
    fn pixel_error(&self, d: &Vector3<f64>, k: &Matrix3<f64>, f1: &Vector2<f64>) -> f64 {
        let x = self.c + self.j * d;
        if !(x.z.abs() > 1e-15) {
            return f64::INFINITY;
        }
        let p = k * (x / x.z);
        ((p.x - f1.x).powi(2) + (p.y - f1.y).powi(2)).sqrt()
    }

    /// Two rows `(J_x - u J_z) d = -(c_x - u c_z)` (and likewise for `v`),
    /// scaled by `1 / c_z` so residuals read as normalized image errors.
    fn rows(&self) -> [(Vector3<f64>, f64); 2] {
        let s = 1.0 / self.c.z;
        let jr = |r: usize| Vector3::new(self.j[(r, 0)], self.j[(r, 1)], self.j[(r, 2)]);
        let (jx, jy, jz) = (jr(0), jr(1), jr(2));
        [
            ((jx - jz * self.z.x) * s, -(self.c.x - self.z.x * self.c.z) * s),
            ((jy - jz * self.z.y) * s, -(self.c.y - self.z.y * self.c.z) * s),
        ]
    }
}

fn affine_models(features: &[FeatureTriple], x: &VioState, cfg: &VioConfig) -> Vec<Option<AffineTransfer>> {
    let Ok(base) = window_tensor(x, cfg) else {
        return features.iter().map(|_| None).collect();
    };
    let shifted: Vec<_> = (0..3)
        .map(|i| {
            let mut y = *x;
            y.p1[i] += 1.0;
            window_tensor(&y, cfg).ok()
        })
        .collect();
    if shifted.iter().any(Option::is_none) || base.is_degenerate() {
        return features.iter().map(|_| None).collect();
    }
    let k = &cfg.intrinsics;
    let k_inv = k.inverse_matrix();
    let kt = k.matrix().transpose();
    features
        .iter()
        .map(|f| {
            let l2 = transfer_line(&base, &f.f2, cfg);
            let x3 = k_inv * Vector3::new(f.f3.x, f.f3.y, 1.0);
            let l2n = kt * l2.coefficients();
            let (x3, l2n) = (x3.normalize(), l2n.normalize());
            let c = base.contract(&x3, &l2n);
            let mut j = Matrix3::zeros();
            for (i, t) in shifted.iter().enumerate() {
                let ci = t.as_ref().unwrap().contract(&x3, &l2n);
                j.set_column(i, &(ci - c));
            }
            if !(c.z.abs() > 1e-12 * c.norm()) || !c.iter().all(|v| v.is_finite()) {
                return None;
            }
            let z = k_inv * Vector3::new(f.f1.x, f.f1.y, 1.0);
            Some(AffineTransfer {
                c,
                j,
                z: Vector2::new(z.x, z.y),
            })
        })
        .collect()
}

fn solve_offset(models: &[&AffineTransfer]) -> Option<Vector3<f64>> {
    let mut a = DMatrix::zeros(2 * models.len(), 3);
    let mut b = DVector::zeros(2 * models.len());
    for (m, model) in models.iter().enumerate() {
        for (r, (row, rhs)) in model.rows().into_iter().enumerate() {
            a.set_row(2 * m + r, &row.transpose());
            b[2 * m + r] = rhs;
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let d = svd.solve(&b, 1e-9 * smax).ok()?;
    let d = Vector3::new(d[0], d[1], d[2]);
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Three-point RANSAC on the newest translation.
///
/// The rotation and the older poses are fixed at the predicted state; each
/// hypothesis refits the newest position from three sampled features, and is
/// scored by the number of features whose transfer error is below the
/// threshold. The largest consensus set is refit once on all its members.
/// Deterministic for a given seed.
pub fn ransac_gate(
    features: &[FeatureTriple],
    predicted: &VioState,
    cfg: &VioConfig,
    seed: u64,
) -> RansacOutcome {
    let theta = cfg.ransac.threshold;
    let k = cfg.intrinsics.matrix();
    let models = affine_models(features, predicted, cfg);
    let usable: Vec<usize> = (0..features.len()).filter(|&i| models[i].is_some()).collect();
    if usable.len() < 3 {
        log::warn!("RANSAC skipped: {} usable features", usable.len());
        return RansacOutcome {
            inliers: features.to_vec(),
            status: GateStatus::Passthrough,
            offset: Vector3::zeros(),
        };
    }
    let consensus = |d: &Vector3<f64>| -> Vec<usize> {
        usable
            .iter()
            .copied()
            .filter(|&i| models[i].as_ref().unwrap().pixel_error(d, &k, &features[i].f1) < theta)
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = Vec::new();
    let mut best_d = Vector3::zeros();
    for _ in 0..cfg.ransac.iterations {
        let pick = rand::seq::index::sample(&mut rng, usable.len(), 3);
        let sample: Vec<&AffineTransfer> = pick
            .iter()
            .map(|i| models[usable[i]].as_ref().unwrap())
            .collect();
        let Some(d) = solve_offset(&sample) else {
            continue;
        };
        let set = consensus(&d);
        if set.len() > best.len() {
            best = set;
            best_d = d;
        }
    }
    if best.len() >= 3 {
        let all: Vec<&AffineTransfer> = best.iter().map(|&i| models[i].as_ref().unwrap()).collect();
        if let Some(d) = solve_offset(&all) {
            let refit = consensus(&d);
            if refit.len() >= best.len() {
                best = refit;
                best_d = d;
            }
        }
    }
    let needed = cfg.ransac.min_inlier_ratio * usable.len() as f64;
    if (best.len() as f64) < needed {
        let zero = Vector3::zeros();
        return RansacOutcome {
            inliers: consensus(&zero).into_iter().map(|i| features[i]).collect(),
            status: GateStatus::Fallback,
            offset: zero,
        };
    }
    RansacOutcome {
        inliers: best.into_iter().map(|i| features[i]).collect(),
        status: GateStatus::Consensus,
        offset: best_d,
    }
}
