use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::bucketing::bucket;
use super::config::VioConfig;
use super::measurement::MeasurementModel;
use super::ransac::{ransac_gate, GateStatus};
use super::state::{VioState, QUATERNION_BLOCKS};
use super::transition::{check_interval, transition_vector};
use crate::confidence::{angle_confidence, combine, forward_motion_ratio, mode_scales, ConfidenceMode, MIN_SPEED};
use crate::error::{Error, Result};
use crate::filter::{ConfidenceMatrix, GaussianState, Ukf};
use crate::geometry::RigidPose;
use crate::imu::ImuSample;
use crate::par::Execution;
use crate::tracks::{FeatureTriple, TrackSet};

/// Everything the filter consumes for one camera frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameInput<'a> {
    pub index: usize,
    pub t: f64,
    /// time since the previous frame, s
    pub dt: f64,
    /// IMU samples covering `[t - dt, t]`
    pub imu: &'a [ImuSample],
    pub triples: &'a [FeatureTriple],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub t: f64,
    pub mode: ConfidenceMode,
    pub candidates: usize,
    pub bucketed: usize,
    pub inliers: usize,
    pub dropped_degenerate: usize,
    pub gate: Option<GateStatus>,
    pub tau: f64,
    pub velocity_norm: f64,
    pub gyro_norm: f64,
    /// mean of `c_m` over the used features
    pub mean_confidence: f64,
    /// mean of the applied noise scale
    pub mean_scale: f64,
    pub updated: bool,
    /// why the frame was prediction-only
    pub skipped: Option<String>,
    pub innovation_rms: f64,
    pub covariance_trace: f64,
}

impl FrameDiagnostics {
    fn prediction_only(input: &FrameInput, mode: ConfidenceMode, reason: &str) -> Self {
        Self {
            frame: input.index,
            t: input.t,
            mode,
            candidates: input.triples.len(),
            bucketed: 0,
            inliers: 0,
            dropped_degenerate: 0,
            gate: None,
            tau: 0.0,
            velocity_norm: 0.0,
            gyro_norm: 0.0,
            mean_confidence: 0.0,
            mean_scale: 0.0,
            updated: false,
            skipped: Some(reason.to_string()),
            innovation_rms: 0.0,
            covariance_trace: 0.0,
        }
    }
}

pub fn make_filter(cfg: &VioConfig, execution: Execution) -> Ukf {
    Ukf::new(cfg.sigma)
        .with_quaternion_blocks(QUATERNION_BLOCKS.to_vec())
        .with_execution(execution)
}

/// Unscented prediction through the window transition.
pub fn predict(ukf: &Ukf, state: &GaussianState, input: &FrameInput, cfg: &VioConfig) -> Result<GaussianState> {
    check_interval(input.dt)?;
    let mean = VioState::unpack(&state.mean)?;
    let intervals = input.imu.len().saturating_sub(1).max(1);
    let q = cfg.process.matrix(&mean.q1, input.dt, intervals);
    let g = cfg.gravity;
    ukf.predict(state, |x| transition_vector(x, input.imu, input.dt, &g), &q)
}

/// Mean gyro reading over the frame, rad/s.
pub fn mean_gyro(imu: &[ImuSample]) -> Vector3<f64> {
    if imu.is_empty() {
        return Vector3::zeros();
    }
    imu.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / imu.len() as f64
}

/// Per-feature confidences and the noise scales the mode applies.
#[derive(Clone, Debug)]
pub struct ConfidenceInference {
    pub tau: f64,
    pub combined: Vec<f64>,
    pub scales: Vec<f64>,
    pub velocity_norm: f64,
    pub gyro_norm: f64,
}

pub fn infer_confidence(
    x: &VioState,
    features: &[FeatureTriple],
    imu: &[ImuSample],
    cfg: &VioConfig,
) -> Result<ConfidenceInference> {
    let gyro = mean_gyro(imu);
    let tau = forward_motion_ratio(&x.v, &gyro);
    let r_wi = x.q1.rotation_matrix();
    let r_ic = cfg.extrinsics.rotation_matrix();
    let v_cam = r_ic.transpose() * r_wi.transpose() * x.v;
    let angles: Option<Vec<f64>> = features
        .iter()
        .map(|f| angle_confidence(&v_cam, &cfg.intrinsics.bearing(&f.f1)))
        .collect();
    let (combined, scales) = match angles {
        Some(a) if x.v.norm() >= MIN_SPEED => {
            let c = combine(&a, tau)?;
            let s = mode_scales(cfg.mode, &c, &cfg.confidence_limits);
            (c.combined, s)
        }
        _ => (vec![1.0; features.len()], vec![1.0; features.len()]),
    };
    Ok(ConfidenceInference {
        tau,
        combined,
        scales,
        velocity_norm: x.v.norm(),
        gyro_norm: gyro.norm(),
    })
}

/// RANSAC seed of a frame.
pub fn frame_seed(base: u64, frame: usize) -> u64 {
    base ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One filter cycle: predict, bucket, gate, infer confidence, update.
///
/// Without triples (or when every feature is rejected) the step is
/// prediction-only and the diagnostics say why.
pub fn vio_step(
    ukf: &Ukf,
    state: &GaussianState,
    input: &FrameInput,
    cfg: &VioConfig,
) -> Result<(GaussianState, FrameDiagnostics)> {
    let predicted = predict(ukf, state, input, cfg)?;
    let mut diag = FrameDiagnostics::prediction_only(input, cfg.mode, "no feature triples");
    diag.covariance_trace = predicted.covariance.trace();
    if input.triples.is_empty() {
        return Ok((predicted, diag));
    }
    let prior = VioState::unpack(&predicted.mean)?;
    let selected = bucket(input.triples, cfg);
    diag.bucketed = selected.len();
    if selected.is_empty() {
        diag.skipped = Some("no features inside the image".into());
        return Ok((predicted, diag));
    }
    let gate = ransac_gate(&selected, &prior, cfg, frame_seed(cfg.ransac.seed, input.index));
    diag.gate = Some(gate.status);
    if gate.inliers.is_empty() {
        diag.skipped = Some("zero inliers".into());
        return Ok((predicted, diag));
    }
    let model = match MeasurementModel::build(&prior, &gate.inliers, cfg) {
        Ok(m) => m,
        Err(Error::DegenerateGeometry(reason)) => {
            diag.dropped_degenerate = gate.inliers.len();
            diag.skipped = Some(format!("degenerate window: {reason}"));
            return Ok((predicted, diag));
        }
        Err(e) => return Err(e),
    };
    diag.dropped_degenerate = model.dropped;
    if model.is_empty() {
        diag.skipped = Some("all features degenerate".into());
        return Ok((predicted, diag));
    }
    let conf = infer_confidence(&prior, &model.features, input.imu, cfg)?;
    let c_f = ConfidenceMatrix::from_blocks(&conf.scales, 2)?;
    let z = model.measurement();
    let r = model.noise_matrix();
    let out = ukf.update(&predicted, |x| model.predict_vector(x, cfg), &z, &r, &c_f)?;

    let m = model.len() as f64;
    diag.inliers = model.len();
    diag.tau = conf.tau;
    diag.velocity_norm = conf.velocity_norm;
    diag.gyro_norm = conf.gyro_norm;
    diag.mean_confidence = conf.combined.iter().sum::<f64>() / m;
    diag.mean_scale = conf.scales.iter().sum::<f64>() / m;
    diag.updated = true;
    diag.skipped = None;
    diag.innovation_rms = (out.innovation.norm_squared() / out.innovation.len() as f64).sqrt();
    diag.covariance_trace = out.state.covariance.trace();
    Ok((out.state, diag))
}

/// Filter instance that owns its state and walks a sequence frame by frame.
#[derive(Clone, Debug)]
pub struct VioPipeline {
    pub cfg: VioConfig,
    ukf: Ukf,
    state: GaussianState,
}

impl VioPipeline {
    pub fn new(cfg: VioConfig, initial: &VioState) -> Result<Self> {
        cfg.validate()?;
        let state = GaussianState::new(initial.pack(), cfg.initial_covariance.matrix())?;
        Ok(Self {
            ukf: make_filter(&cfg, Execution::default()),
            cfg,
            state,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.ukf = make_filter(&self.cfg, execution);
        self
    }

    pub fn state(&self) -> &GaussianState {
        &self.state
    }

    pub fn estimate(&self) -> VioState {
        VioState::unpack_unchecked(&self.state.mean)
    }

    pub fn step(&mut self, input: &FrameInput) -> Result<FrameDiagnostics> {
        let (next, diag) = vio_step(&self.ukf, &self.state, input, &self.cfg).map_err(|e| match e {
            Error::Numerical(reason) => Error::NumericalAtFrame {
                frame: input.index,
                reason,
            },
            other => other,
        })?;
        self.state = next;
        Ok(diag)
    }
}

/// Inputs of a full run: frame times, the IMU stream and the feature tracks.
#[derive(Clone, Debug)]
pub struct SequenceInput {
    pub times: Vec<f64>,
    pub imu: Vec<ImuSample>,
    pub tracks: TrackSet,
    /// state at the first frame
    pub initial: VioState,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub frame: usize,
    pub t: f64,
    /// `world_from_imu`
    pub pose: RigidPose,
    pub velocity: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Vec<TrajectoryPoint>,
    pub diagnostics: Vec<FrameDiagnostics>,
    pub final_state: GaussianState,
}

/// IMU samples with `t0 <= t <= t1` (with a small tolerance).
pub fn imu_between(imu: &[ImuSample], t0: f64, t1: f64) -> &[ImuSample] {
    let eps = 1e-9 * t1.abs().max(1.0);
    let lo = imu.partition_point(|s| s.t < t0 - eps);
    let hi = imu.partition_point(|s| s.t <= t1 + eps);
    &imu[lo..hi.max(lo)]
}

fn point(frame: usize, t: f64, x: &DVector<f64>) -> TrajectoryPoint {
    let s = VioState::unpack_unchecked(x);
    TrajectoryPoint {
        frame,
        t,
        pose: s.pose1(),
        velocity: s.v,
    }
}

/// Runs the filter over every frame of `input`.
pub fn run_sequence(cfg: &VioConfig, input: &SequenceInput, execution: Execution) -> Result<RunOutput> {
    if input.times.is_empty() {
        return Err(Error::InvalidInput("sequence has no frames".into()));
    }
    if input.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("frame timestamps must increase".into()));
    }
    let mut pipe = VioPipeline::new(cfg.clone(), &input.initial)?.with_execution(execution);
    let mut trajectory = vec![point(0, input.times[0], &pipe.state.mean)];
    let mut diagnostics = Vec::with_capacity(input.times.len());
    for k in 1..input.times.len() {
        let (t0, t1) = (input.times[k - 1], input.times[k]);
        let triples = input.tracks.triples_at(k);
        let frame = FrameInput {
            index: k,
            t: t1,
            dt: t1 - t0,
            imu: imu_between(&input.imu, t0, t1),
            triples: &triples,
        };
        let d = pipe.step(&frame)?;
        log::debug!(
            "frame {k}: inliers {} tau {:.3} updated {}",
            d.inliers,
            d.tau,
            d.updated
        );
        diagnostics.push(d);
        trajectory.push(point(k, t1, &pipe.state.mean));
    }
    Ok(RunOutput {
        trajectory,
        diagnostics,
        final_state: pipe.state,
    })
}
