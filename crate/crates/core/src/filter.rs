//! Additive-noise unscented Kalman filter with a confidence-scaled measurement
//! noise in the gain.
//!
//! States may carry unit-quaternion blocks (four consecutive entries); those
//! blocks are renormalized after the unscented mean is formed and after each
//! update. Everything else is the textbook unscented transform.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

const JITTER: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{}, expected {n}x{n}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn symmetrize(&mut self) {
        let c = &self.covariance;
        self.covariance = (c + c.transpose()) * 0.5;
    }

    /// Max |P - P^T|.
    pub fn asymmetry(&self) -> f64 {
        (&self.covariance - self.covariance.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.covariance + self.covariance.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

/// Scaled sigma-point parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SigmaWeights {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    /// `n + lambda`
    pub spread: f64,
}

impl SigmaParams {
    pub fn lambda(&self, n: usize) -> f64 {
        self.spread(n) - n as f64
    }

    /// `n + lambda = alpha^2 (n + kappa)`, computed without cancellation.
    pub fn spread(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa)
    }

    pub fn weights(&self, n: usize) -> Result<SigmaWeights> {
        let spread = self.spread(n);
        if !(spread > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma parameters give n + lambda = {spread} <= 0"
            )));
        }
        let w = 0.5 / spread;
        let mut mean = vec![w; 2 * n + 1];
        let mut cov = vec![w; 2 * n + 1];
        mean[0] = 1.0 - n as f64 / spread;
        cov[0] = mean[0] + (1.0 - self.alpha * self.alpha + self.beta);
        Ok(SigmaWeights { mean, cov, spread })
    }
}

/// Per-coordinate scale applied to R in the gain, built block-wise:
/// `C_f = blockdiag(c_1 I_b, ..., c_M I_b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMatrix {
    diag: DVector<f64>,
    block: usize,
}

impl ConfidenceMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            diag: DVector::from_element(dim, 1.0),
            block: 1,
        }
    }

    pub fn from_blocks(scales: &[f64], block: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::InvalidInput("confidence block size must be > 0".into()));
        }
        if let Some(c) = scales.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "confidence scales must be finite and >= 0, got {c}"
            )));
        }
        let diag = DVector::from_iterator(
            scales.len() * block,
            scales.iter().flat_map(|c| std::iter::repeat_n(*c, block)),
        );
        Ok(Self { diag, block })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diag
    }

    /// Per-block scales `c_m`.
    pub fn scales(&self) -> Vec<f64> {
        self.diag.iter().step_by(self.block).copied().collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }

    /// `C_f R`.
    pub fn scale(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = r.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.diag[i];
        }
        out
    }
}

/// Result of a measurement update.
#[derive(Clone, Debug)]
pub struct UpdateOutput {
    pub state: GaussianState,
    /// predicted measurement
    pub predicted: DVector<f64>,
    /// `z - z_hat`
    pub innovation: DVector<f64>,
}


#[derive(Clone, Debug)]
pub struct Ukf {
    pub params: SigmaParams,
    /// Start index of every unit-quaternion block in the state.
    pub quaternion_blocks: Vec<usize>,
    pub execution: Execution,
}

impl Default for Ukf {
    fn default() -> Self {
        Self::new(SigmaParams::default())
    }
}

impl Ukf {
    pub fn new(params: SigmaParams) -> Self {
        Self {
            params,
            quaternion_blocks: Vec::new(),
            execution: Execution::default(),
        }
    }

    pub fn with_quaternion_blocks(mut self, blocks: Vec<usize>) -> Self {
        self.quaternion_blocks = blocks;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn normalize_quaternions(&self, x: &mut DVector<f64>) {
        for &s in &self.quaternion_blocks {
            let mut q = x.rows_mut(s, 4);
            let n = q.norm();
            if n > 0.0 && n.is_finite() {
                q /= n;
            }
        }
    }

    /// Sigma points `x, x +- sqrt((n + lambda) P)_i`.
    pub fn sigma_points(&self, state: &GaussianState) -> Result<(Vec<DVector<f64>>, SigmaWeights)> {
        let n = state.dim();
        let weights = self.params.weights(n)?;
        let scaled = &state.covariance * weights.spread;
        let sym = (&scaled + scaled.transpose()) * 0.5;
        let chol = match sym.clone().cholesky() {
            Some(c) => c,
            None => {
                let jitter = JITTER * weights.spread * Self::magnitude(&state.covariance);
                let jittered = sym + DMatrix::identity(n, n) * jitter;
                jittered.cholesky().ok_or_else(|| {
                    Error::Numerical("covariance is not positive definite (Cholesky failed after jitter)".into())
                })?
            }
        };
        let l = chol.l();
        let mut points = Vec::with_capacity(2 * n + 1);
        points.push(state.mean.clone());
        for i in 0..n {
            points.push(&state.mean + l.column(i));
        }
        for i in 0..n {
            points.push(&state.mean - l.column(i));
        }
        Ok((points, weights))
    }

    /// `sum_i w_i p_i`, evaluated as `p_0 + sum_{i>0} w_i (p_i - p_0)` since the
    /// weights sum to one; small alpha makes the raw form lose ~1e-9.
    fn weighted_mean(points: &[DVector<f64>], w: &[f64]) -> DVector<f64> {
        let center = &points[0];
        let mut m = center.clone();
        for (p, wi) in points.iter().zip(w).skip(1) {
            m += (p - center) * *wi;
        }
        m
    }

    fn cross_covariance(
        a: &[DVector<f64>],
        a_mean: &DVector<f64>,
        b: &[DVector<f64>],
        b_mean: &DVector<f64>,
        w: &[f64],
    ) -> DMatrix<f64> {
        // expanded about the centre point so the large negative centre
        // weight never multiplies an outer product
        let (a0, b0) = (&a[0], &b[0]);
        let da0 = a0 - a_mean;
        let db0 = b0 - b_mean;
        let mut c = DMatrix::zeros(a_mean.len(), b_mean.len());
        let mut sa = DVector::zeros(a_mean.len());
        let mut sb = DVector::zeros(b_mean.len());
        for ((ai, bi), wi) in a.iter().zip(b).zip(w).skip(1) {
            let ea = ai - a0;
            let eb = bi - b0;
            c.ger(*wi, &ea, &eb, 1.0);
            sa.axpy(*wi, &ea, 1.0);
            sb.axpy(*wi, &eb, 1.0);
        }
        let total: f64 = w.iter().sum();
        c.ger(1.0, &sa, &db0, 1.0);
        c.ger(1.0, &da0, &sb, 1.0);
        c.ger(total, &da0, &db0, 1.0);
        c
    }

    /// Unscented prediction through `f` with additive process noise `q`.
    pub fn predict<F>(&self, state: &GaussianState, f: F, q: &DMatrix<f64>) -> Result<GaussianState>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Sync + Send,
    {
        let (points, w) = self.sigma_points(state)?;
        let propagated = self.execution.map(&points, |p| f(p));
        if propagated.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("transition produced non-finite sigma point".into()));
        }
        let raw_mean = Self::weighted_mean(&propagated, &w.mean);
        let cov = Self::cross_covariance(&propagated, &raw_mean, &propagated, &raw_mean, &w.cov) + q;
        let mut mean = raw_mean;
        self.normalize_quaternions(&mut mean);
        let mut out = GaussianState::new(mean, cov)?;
        out.symmetrize();
        Ok(out)
    }

    /// Confidence-weighted update:
    /// `K = P_xy (P_yy + C_f R)^-1`, `x+ = x- + K (z - z_hat)`,
    /// `P+ = P- - K (P_yy + C_f R) K^T`.
    pub fn update<H>(
        &self,
        state: &GaussianState,
        h: H,
        z: &DVector<f64>,
        r: &DMatrix<f64>,
        confidence: &ConfidenceMatrix,
    ) -> Result<UpdateOutput>
    where
        H: Fn(&DVector<f64>) -> DVector<f64> + Sync + Send,
    {
        let m = z.len();
        if r.nrows() != m || r.ncols() != m || confidence.dim() != m {
            return Err(Error::InvalidInput(format!(
                "measurement dims disagree: z {m}, R {}x{}, C_f {}",
                r.nrows(),
                r.ncols(),
                confidence.dim()
            )));
        }
        let (points, w) = self.sigma_points(state)?;
        let ys = self.execution.map(&points, |p| h(p));
        if ys.iter().any(|y| y.len() != m || y.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("measurement model produced invalid output".into()));
        }
        let y_mean = Self::weighted_mean(&ys, &w.mean);
        let p_yy = Self::cross_covariance(&ys, &y_mean, &ys, &y_mean, &w.cov);
        let p_xy = Self::cross_covariance(&points, &state.mean, &ys, &y_mean, &w.cov);
        let s = p_yy + confidence.scale(r);

        let gain = Self::solve_gain(&p_xy, &s).or_else(|| {
            let jittered = &s + DMatrix::identity(m, m) * (JITTER * Self::magnitude(&s));
            Self::solve_gain(&p_xy, &jittered)
        });
        let gain = gain.ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?;

        let innovation = z - &y_mean;
        let mut mean = &state.mean + &gain * &innovation;
        self.normalize_quaternions(&mut mean);
        let cov = &state.covariance - &gain * &s * gain.transpose();
        let mut out = GaussianState::new(mean, cov)?;
        out.symmetrize();
        Ok(UpdateOutput {
            state: out,
            predicted: y_mean,
            innovation,
        })
    }

    /// `max(1, max_i |A_ii|)`: jitter is relative for large matrices.
    fn magnitude(a: &DMatrix<f64>) -> f64 {
        a.diagonal().iter().fold(1.0, |m, d| m.max(d.abs()))
    }

    fn solve_gain(p_xy: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        // K S = P_xy  <=>  S^T K^T = P_xy^T
        let kt = s.transpose().lu().solve(&p_xy.transpose())?;
        if kt.iter().all(|v| v.is_finite()) {
            Some(kt.transpose())
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
        let a = random_matrix(rng, n, n, 1.0);
        &a * a.transpose() * 0.5 + DMatrix::identity(n, n) * floor
    }

    #[test]
    fn weights_sum_to_one() {
        for n in [1, 4, 30] {
            let w = SigmaParams::default().weights(n).unwrap();
            let s: f64 = w.mean.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "n={n} sum={s}");
            let c = w.spread;
            assert!((c - 1e-6 * n as f64).abs() < 1e-18);
        }
    }

    #[test]
    fn identity_transition_without_noise_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = GaussianState::new(
            DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0)),
            random_spd(&mut rng, 5, 0.1),
        )
        .unwrap();
        let out = Ukf::default()
            .predict(&state, |x| x.clone(), &DMatrix::zeros(5, 5))
            .unwrap();
        assert!((&out.mean - &state.mean).abs().max() < 1e-10);
        assert!((&out.covariance - &state.covariance).abs().max() < 1e-10);
    }

    #[test]
    fn quaternion_block_stays_unit_under_rotation() {
        use crate::geometry::Quaternion;
        use nalgebra::Vector3;
        let q0 = Quaternion::from_euler(0.1, 0.2, 0.3);
        let state = GaussianState::new(
            DVector::from_row_slice(&q0.to_array()),
            DMatrix::identity(4, 4) * 1e-4,
        )
        .unwrap();
        let ukf = Ukf::default().with_quaternion_blocks(vec![0]);
        let f = |x: &DVector<f64>| {
            let q = Quaternion::from_slice(x.as_slice());
            DVector::from_row_slice(&q.integrate_raw(&Vector3::new(0.3, -0.5, 1.0), 0.1).to_array())
        };
        let out = ukf.predict(&state, f, &(DMatrix::identity(4, 4) * 1e-8)).unwrap();
        assert!((out.mean.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_confidence_is_standard_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = GaussianState::new(DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)), random_spd(&mut rng, 3, 0.5)).unwrap();
        let h = |x: &DVector<f64>| DVector::from_vec(vec![x[0] * x[1], x[2].sin()]);
        let z = DVector::from_vec(vec![0.3, -0.2]);
        let r = DMatrix::identity(2, 2) * 0.1;
        let ukf = Ukf::default();
        let a = ukf.update(&state, h, &z, &r, &ConfidenceMatrix::identity(2)).unwrap();
        let b = ukf
            .update(&state, h, &z, &r, &ConfidenceMatrix::from_blocks(&[1.0, 1.0], 1).unwrap())
            .unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn huge_confidence_leaves_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = GaussianState::new(DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)), random_spd(&mut rng, 4, 0.5)).unwrap();
        let hm = random_matrix(&mut rng, 4, 4, 1.0);
        let h = |x: &DVector<f64>| &hm * x;
        let z = DVector::from_fn(4, |_, _| rng.random_range(-5.0..5.0));
        let r = DMatrix::identity(4, 4);
        let cf = ConfidenceMatrix::from_blocks(&[1e12, 1e12], 2).unwrap();
        let out = Ukf::default().update(&state, h, &z, &r, &cf).unwrap();
        let rel = (&out.state.mean - &state.mean).norm() / state.mean.norm();
        assert!(rel < 1e-6, "rel {rel}");
        let relc = (&out.state.covariance - &state.covariance).norm() / state.covariance.norm();
        assert!(relc < 1e-6);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let state = GaussianState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let err = Ukf::default()
            .update(
                &state,
                |x| x.clone(),
                &DVector::zeros(2),
                &DMatrix::identity(2, 2),
                &ConfidenceMatrix::identity(4),
            )
            .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn singular_innovation_is_reported() {
        // zero measurement sensitivity and zero noise
        let state = GaussianState::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let err = Ukf::default()
            .update(
                &state,
                |_| DVector::zeros(2),
                &DVector::zeros(2),
                &DMatrix::zeros(2, 2),
                &ConfidenceMatrix::identity(2),
            );
        // jitter rescues an exactly-zero innovation matrix
        assert!(err.is_ok());
        let err = Ukf::default().update(
            &state,
            |_| DVector::from_element(2, f64::NAN),
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
            &ConfidenceMatrix::identity(2),
        );
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn non_pd_covariance_fails_cleanly() {
        let mut p = DMatrix::identity(2, 2);
        p[(1, 1)] = -1.0;
        let state = GaussianState::new(DVector::zeros(2), p).unwrap();
        let err = Ukf::default().predict(&state, |x| x.clone(), &DMatrix::zeros(2, 2));
        assert!(matches!(err, Err(Error::Numerical(_))));
    }

    #[test]
    fn update_shrinks_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let state = GaussianState::new(DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)), random_spd(&mut rng, 4, 0.2)).unwrap();
            let hm = random_matrix(&mut rng, 3, 4, 1.0);
            let h = |x: &DVector<f64>| &hm * x + DVector::from_fn(3, |i, _| x[i].powi(2) * 0.1);
            let r = random_spd(&mut rng, 3, 0.1);
            let out = Ukf::default()
                .update(&state, h, &DVector::zeros(3), &r, &ConfidenceMatrix::identity(3))
                .unwrap();
            assert!(out.state.covariance.trace() <= state.covariance.trace() + 1e-12);
            assert!(out.state.asymmetry() < 1e-10);
            assert!(out.state.min_eigenvalue() > -1e-9);
        }
    }

    #[test]
    fn larger_confidence_keeps_posterior_nearer_prior() {
        let state = GaussianState::new(DVector::from_vec(vec![1.0]), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let z = DVector::from_vec(vec![4.0]);
        let r = DMatrix::from_element(1, 1, 0.5);
        let mut last = f64::INFINITY;
        for c in [0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let out = Ukf::default()
                .update(&state, |x| x * 1.5, &z, &r, &ConfidenceMatrix::from_blocks(&[c], 1).unwrap())
                .unwrap();
            let d = (out.state.mean[0] - 1.0).abs();
            assert!(d < last);
            last = d;
        }
    }
}
