#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trivio::confidence::ConfidenceMode;
use trivio::filter::{ConfidenceMatrix, GaussianState, Ukf};
use trivio::par::Execution;
use trivio::sim::{generate_scenario, ScenarioConfig, TrajectoryKind};
use trivio::tracks::FeatureTriple;
use trivio::vio::*;

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a * a.transpose()) * scale + DMatrix::identity(n, n) * scale * 0.1
}

fn gaussian(rng: &mut ChaCha8Rng, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = cov.clone().cholesky().unwrap().l();
    let e = DVector::from_fn(cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    l * e
}

/// Runs the UKF and a closed-form Kalman filter side by side on a random
/// linear-Gaussian system. Returns the largest mean and covariance deviations.
pub fn linear_kf_deviation(seed: u64, n: usize, m: usize, steps: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q() * 0.95;
    let h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let q = random_spd(&mut rng, n, 0.01);
    let r = random_spd(&mut rng, m, 0.1);
    let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut p = random_spd(&mut rng, n, 0.5);
    let mut truth = &x + gaussian(&mut rng, &p);
    let ukf = Ukf::default();
    let mut state = GaussianState::new(x.clone(), p.clone()).unwrap();
    let (mut dm, mut dp) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        truth = &f * &truth + gaussian(&mut rng, &q);
        let z = &h * &truth + gaussian(&mut rng, &r);

        x = &f * &x;
        p = &f * &p * f.transpose() + &q;
        let s = &h * &p * h.transpose() + &r;
        let k = &p * h.transpose() * s.try_inverse().unwrap();
        x = &x + &k * (&z - &h * &x);
        let a = DMatrix::identity(n, n) - &k * &h;
        p = &a * &p * a.transpose() + &k * &r * k.transpose();

        let pred = ukf.predict(&state, |v| &f * v, &q).unwrap();
        state = ukf
            .update(&pred, |v| &h * v, &z, &r, &ConfidenceMatrix::identity(m))
            .unwrap()
            .state;
        dm = dm.max((&state.mean - &x).abs().max());
        dp = dp.max((&state.covariance - &p).abs().max());
    }
    (dm, dp)
}

pub fn frame<'a>(input: &'a SequenceInput, k: usize, triples: &'a [FeatureTriple]) -> FrameInput<'a> {
    let (t0, t1) = (input.times[k - 1], input.times[k]);
    FrameInput {
        index: k,
        t: t1,
        dt: t1 - t0,
        imu: imu_between(&input.imu, t0, t1),
        triples,
    }
}

/// Result of running the pipeline in mode `off` next to a hand-wired UKF.
pub struct OffModeComparison {
    pub frames: usize,
    pub updates: usize,
    /// largest mean deviation over all frames
    pub mean: f64,
    /// largest covariance deviation over all frames
    pub covariance: f64,
}

/// Runs the pipeline in mode `off` on an s-curve scenario and, step by step,
/// the same prediction, gating and update with `C_f = I` through the filter
/// directly.
pub fn off_mode_comparison(duration: f64) -> OffModeComparison {
    let sc = generate_scenario(&ScenarioConfig {
        trajectory: TrajectoryKind::SCurve,
        duration,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let cfg = sc.vio_config(&VioConfig {
        mode: ConfidenceMode::Off,
        ..VioConfig::default()
    });
    let input = sc.sequence_input();

    let mut pipe = VioPipeline::new(cfg.clone(), &input.initial)
        .unwrap()
        .with_execution(Execution::Sequential);
    let ukf = make_filter(&cfg, Execution::Sequential);
    let mut state = GaussianState::new(input.initial.pack(), cfg.initial_covariance.matrix()).unwrap();
    let mut out = OffModeComparison {
        frames: input.times.len(),
        updates: 0,
        mean: 0.0,
        covariance: 0.0,
    };
    for k in 1..input.times.len() {
        let triples = input.tracks.triples_at(k);
        let f = frame(&input, k, &triples);
        pipe.step(&f).unwrap();

        let predicted = predict(&ukf, &state, &f, &cfg).unwrap();
        let prior = VioState::unpack(&predicted.mean).unwrap();
        let selected = bucket(&triples, &cfg);
        let gate = ransac_gate(&selected, &prior, &cfg, frame_seed(cfg.ransac.seed, k));
        state = match MeasurementModel::build(&prior, &gate.inliers, &cfg) {
            Ok(model) if !model.is_empty() => {
                out.updates += 1;
                let z = model.measurement();
                let r = cfg.measurement_noise(z.len());
                ukf.update(&predicted, |x| model.predict_vector(x, &cfg), &z, &r, &ConfidenceMatrix::identity(z.len()))
                    .unwrap()
                    .state
            }
            _ => predicted,
        };
        out.mean = out.mean.max((&pipe.state().mean - &state.mean).abs().max());
        out.covariance = out.covariance.max((&pipe.state().covariance - &state.covariance).abs().max());
    }
    out
}
