//! Synthetic street scenes: analytic vehicle trajectories, a corridor of
//! near wall features plus distant features ahead of the vehicle, exact IMU
//! synthesis and noisy feature tracks.

mod bundle;
mod trajectory;

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use bundle::{read_bundle, write_bundle, BUNDLE_FILES};
pub use trajectory::{Kinematics, PathShape, SpeedProfile, Trajectory, TrajectoryKind};

use crate::confidence::{street_sample, StreetSample};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, ProjectionMatrix, RigidPose};
use crate::imu::{add_white_noise, default_gravity, propagate_bias, synthesize, ImuBias, ImuNoiseSpec, ImuSample};
use crate::tracks::{TrackRow, TrackSet};
use crate::vio::{forward_camera_extrinsics, SequenceInput, VioConfig, VioState};

/// Camera intrinsics, image size and mounting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    pub width: f64,
    pub height: f64,
    /// `imu_from_camera`
    pub extrinsics: RigidPose,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::kitti_like(),
            width: 1242.0,
            height: 375.0,
            extrinsics: forward_camera_extrinsics(),
        }
    }
}

impl CameraRig {
    /// Copies the rig into a filter configuration.
    pub fn apply_to(&self, cfg: &mut VioConfig) {
        cfg.intrinsics = self.intrinsics;
        cfg.image_width = self.width;
        cfg.image_height = self.height;
        cfg.extrinsics = self.extrinsics;
    }
}

/// Street layout: two walls of near features and a population of distant
/// features close to the route ahead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorConfig {
    /// wall-to-wall distance, m
    pub width: f64,
    /// wall features per metre of route and side
    pub density: f64,
    pub wall_height_min: f64,
    pub wall_height_max: f64,
    /// camera depth range in which wall features are tracked, m
    pub near_depth_min: f64,
    pub near_depth_max: f64,
    /// camera depth range in which distant features are tracked, m
    pub far_depth_min: f64,
    pub far_depth_max: f64,
    /// share of all observations that belong to distant features
    pub distant_fraction: f64,
    /// lateral half-spread of distant features around the route, m
    pub far_lateral_spread: f64,
    pub far_height_min: f64,
    pub far_height_max: f64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            width: 14.0,
            density: 1.0,
            wall_height_min: 0.0,
            wall_height_max: 5.0,
            near_depth_min: 3.0,
            near_depth_max: 40.0,
            far_depth_min: 40.0,
            far_depth_max: 300.0,
            distant_fraction: 0.6,
            far_lateral_spread: 8.0,
            far_height_min: -1.0,
            far_height_max: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub trajectory: TrajectoryKind,
    pub shape: PathShape,
    pub speed: SpeedProfile,
    /// s
    pub duration: f64,
    pub corridor: CorridorConfig,
    /// Hz
    pub camera_rate: f64,
    /// Hz; an integer multiple of the camera rate
    pub imu_rate: f64,
    /// px
    pub pixel_noise: f64,
    pub imu_noise: ImuNoiseSpec,
    pub initial_bias: ImuBias,
    pub camera: CameraRig,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryKind::Straight,
            shape: PathShape::default(),
            speed: SpeedProfile::default(),
            duration: 30.0,
            corridor: CorridorConfig::default(),
            camera_rate: 10.0,
            imu_rate: 100.0,
            pixel_noise: 1.0,
            imu_noise: ImuNoiseSpec::low_cost(),
            initial_bias: ImuBias::default(),
            camera: CameraRig::default(),
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Noise-free version of this scenario.
    pub fn noiseless(mut self) -> Self {
        self.pixel_noise = 0.0;
        self.imu_noise = ImuNoiseSpec::zero();
        self
    }

    pub fn imu_per_frame(&self) -> usize {
        (self.imu_rate / self.camera_rate).round() as usize
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.camera_rate).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.camera_rate > 0.0 && self.camera_rate.is_finite()) {
            return bad(format!("camera rate must be positive, got {}", self.camera_rate));
        }
        if !(self.imu_rate >= self.camera_rate) {
            return bad(format!(
                "IMU rate {} Hz is below the camera rate {} Hz",
                self.imu_rate, self.camera_rate
            ));
        }
        let ratio = self.imu_rate / self.camera_rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "IMU rate {} Hz is not an integer multiple of the camera rate {} Hz",
                self.imu_rate, self.camera_rate
            ));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        let d = (self.duration * self.camera_rate).round();
        if (self.duration * self.camera_rate - d).abs() > 1e-9 * d.max(1.0) || d < 2.0 {
            return bad("duration must cover a whole number (>= 2) of camera frames".into());
        }
        let sp = &self.speed;
        if !(sp.mean > 0.0 && sp.period > 0.0 && (0.0..1.0).contains(&sp.modulation)) {
            return bad("speed profile needs mean > 0, period > 0 and modulation in [0, 1)".into());
        }
        let c = &self.corridor;
        if !(c.width > 0.0 && c.density > 0.0) {
            return bad("corridor width and feature density must be positive".into());
        }
        if !(0.0..1.0).contains(&c.distant_fraction) {
            return bad(format!("distant fraction {} outside [0, 1)", c.distant_fraction));
        }
        if !(c.near_depth_min > 0.0
            && c.near_depth_max > c.near_depth_min
            && c.far_depth_max > c.far_depth_min
            && c.far_depth_min > 0.0
            && c.wall_height_max >= c.wall_height_min
            && c.far_height_max >= c.far_height_min
            && c.far_lateral_spread >= 0.0)
        {
            return bad("corridor ranges are inconsistent".into());
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return bad("pixel noise must be non-negative".into());
        }
        if !self.imu_noise.is_valid() {
            return bad("IMU noise must be finite and non-negative".into());
        }
        let sh = &self.shape;
        if !(sh.turn_radius > 0.0
            && sh.s_curve_wavelength > 0.0
            && sh.circuit_semi_major > 0.0
            && sh.circuit_semi_minor > 0.0)
        {
            return bad("path shape lengths must be positive".into());
        }
        self.camera
            .intrinsics
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.camera.width > 0.0 && self.camera.height > 0.0) {
            return bad("image size must be positive".into());
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            kind: self.trajectory,
            shape: self.shape,
            speed: self.speed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
    pub distant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame: usize,
    pub t: f64,
    /// `world_from_imu`
    pub pose: RigidPose,
    pub velocity: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ground_truth: Vec<GroundTruthFrame>,
    pub imu: Vec<ImuSample>,
    pub tracks: TrackSet,
    pub landmarks: Vec<Landmark>,
    /// landmark behind every track id
    pub track_landmarks: BTreeMap<u64, u64>,
}

const IMAGE_MARGIN: f64 = 4.0;

struct Visibility {
    cameras: Vec<ProjectionMatrix>,
    width: f64,
    height: f64,
}

impl Visibility {
    /// Noise-free pixel of `p` at frame `k` if it is tracked there.
    fn pixel(&self, k: usize, p: &Vector3<f64>, depth: (f64, f64)) -> Option<Vector2<f64>> {
        let pr = self.cameras[k].project(p);
        let m = IMAGE_MARGIN;
        (pr.depth >= depth.0
            && pr.depth <= depth.1
            && pr.pixel.x >= m
            && pr.pixel.y >= m
            && pr.pixel.x < self.width - m
            && pr.pixel.y < self.height - m)
            .then_some(pr.pixel)
    }

    fn count(&self, p: &Vector3<f64>, depth: (f64, f64)) -> usize {
        (0..self.cameras.len())
            .filter(|&k| self.pixel(k, p, depth).is_some())
            .count()
    }
}

/// Generates a scenario: ground truth at every camera frame, the IMU stream
/// (with noise and bias walk per the config) and the feature tracks.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let traj = cfg.trajectory();
    let n_frames = cfg.frame_count();
    let ground_truth: Vec<GroundTruthFrame> = (0..n_frames)
        .map(|k| {
            let t = k as f64 / cfg.camera_rate;
            let kin = traj.at(t);
            GroundTruthFrame {
                frame: k,
                t,
                pose: kin.pose(),
                velocity: kin.velocity,
            }
        })
        .collect();
    let vis = Visibility {
        cameras: ground_truth
            .iter()
            .map(|g| ProjectionMatrix::from_pose(&g.pose.compose(&cfg.camera.extrinsics), &cfg.camera.intrinsics))
            .collect(),
        width: cfg.camera.width,
        height: cfg.camera.height,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = &cfg.corridor;
    let near_depth = (c.near_depth_min, c.near_depth_max);
    let far_depth = (c.far_depth_min, c.far_depth_max);
    let s_end = traj.progress(cfg.duration);
    let mut landmarks = Vec::new();

    let near_lo = -c.near_depth_max;
    let near_hi = s_end + c.near_depth_max;
    let n_wall = (c.density * (near_hi - near_lo)).ceil() as usize;
    let mut near_obs = 0usize;
    for side in [1.0, -1.0] {
        for _ in 0..n_wall {
            let s = rng.random_range(near_lo..near_hi);
            let (g, n) = traj.frame_at(s);
            let lateral = side * (0.5 * c.width + rng.random_range(0.0..1.0));
            let xy = g + n * lateral;
            let p = Vector3::new(xy.x, xy.y, rng.random_range(c.wall_height_min..=c.wall_height_max));
            near_obs += vis.count(&p, near_depth);
            landmarks.push(Landmark {
                id: landmarks.len() as u64,
                position: p,
                distant: false,
            });
        }
    }

    if c.distant_fraction > 0.0 {
        let target = c.distant_fraction;
        let mut far_obs = 0usize;
        let (far_lo, far_hi) = (c.far_depth_min, s_end + c.far_depth_max);
        let mut attempts = 0usize;
        let max_attempts = 200_000;
        while (far_obs as f64) < target * (far_obs + near_obs) as f64 {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::Config(format!(
                    "could not reach a distant fraction of {target} (got {:.3})",
                    far_obs as f64 / (far_obs + near_obs).max(1) as f64
                )));
            }
            let s = rng.random_range(far_lo..far_hi);
            let (g, n) = traj.frame_at(s);
            let lateral = rng.random_range(-c.far_lateral_spread..=c.far_lateral_spread);
            let xy = g + n * lateral;
            let p = Vector3::new(xy.x, xy.y, rng.random_range(c.far_height_min..=c.far_height_max));
            let seen = vis.count(&p, far_depth);
            if seen == 0 {
                continue;
            }
            far_obs += seen;
            landmarks.push(Landmark {
                id: landmarks.len() as u64,
                position: p,
                distant: true,
            });
        }
    }

    let mut pix_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    pix_rng.set_stream(1);
    let pix_noise = (cfg.pixel_noise > 0.0).then(|| Normal::new(0.0, cfg.pixel_noise).unwrap());
    let mut tracks = TrackSet::new();
    let mut track_landmarks = BTreeMap::new();
    let mut current: Vec<Option<u64>> = vec![None; landmarks.len()];
    let mut next_id = 0u64;
    for k in 0..n_frames {
        let mut visible = 0usize;
        for (li, lm) in landmarks.iter().enumerate() {
            let depth = if lm.distant { far_depth } else { near_depth };
            let Some(px) = vis.pixel(k, &lm.position, depth) else {
                current[li] = None;
                continue;
            };
            visible += 1;
            let id = *current[li].get_or_insert_with(|| {
                next_id += 1;
                track_landmarks.insert(next_id - 1, lm.id);
                next_id - 1
            });
            let noise = match &pix_noise {
                Some(d) => Vector2::new(d.sample(&mut pix_rng), d.sample(&mut pix_rng)),
                None => Vector2::zeros(),
            };
            tracks.insert(TrackRow {
                frame: k,
                track_id: id,
                u: px.x + noise.x,
                v: px.y + noise.y,
            })?;
        }
        if visible == 0 {
            return Err(Error::Config(format!("no feature is visible at frame {k}")));
        }
    }

    let imu = synthesize_imu(cfg, &traj);
    Ok(Scenario {
        config: cfg.clone(),
        ground_truth,
        imu,
        tracks,
        landmarks,
        track_landmarks,
    })
}

fn synthesize_imu(cfg: &ScenarioConfig, traj: &Trajectory) -> Vec<ImuSample> {
    let n = (cfg.duration * cfg.imu_rate).round() as usize;
    let dt = 1.0 / cfg.imu_rate;
    let g = default_gravity();
    let mut walk_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    walk_rng.set_stream(2);
    let mut bias = cfg.initial_bias;
    let clean: Vec<ImuSample> = (0..=n)
        .map(|i| {
            let t = i as f64 * dt;
            let k = traj.at(t);
            let s = synthesize(
                t,
                &k.acceleration,
                &k.body_rate,
                &k.orientation,
                &bias,
                &g,
                &ImuNoiseSpec::zero(),
                &mut walk_rng,
            );
            if cfg.imu_noise.sigma_ba_walk > 0.0 || cfg.imu_noise.sigma_bg_walk > 0.0 {
                bias = propagate_bias(&bias, dt, &cfg.imu_noise, Some(&mut walk_rng));
            }
            s
        })
        .collect();
    degrade_imu(&clean, &cfg.imu_noise, cfg.seed.wrapping_add(0x1A2B_3C4D))
}

/// Adds i.i.d. accelerometer and gyroscope white noise. The input stream is
/// left untouched.
pub fn degrade_imu(stream: &[ImuSample], noise: &ImuNoiseSpec, seed: u64) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_white_noise(stream, noise, &mut rng)
}

impl Scenario {
    /// True filter state at the first frame (older window poses at the same
    /// pose, true biases).
    pub fn initial_state(&self) -> VioState {
        let g = &self.ground_truth[0];
        let mut s = VioState::at_rest(&g.pose, g.velocity);
        s.ba = self.config.initial_bias.accel;
        s.bg = self.config.initial_bias.gyro;
        s
    }

    pub fn sequence_input(&self) -> SequenceInput {
        SequenceInput {
            times: self.ground_truth.iter().map(|g| g.t).collect(),
            imu: self.imu.clone(),
            tracks: self.tracks.clone(),
            initial: self.initial_state(),
        }
    }

    /// `config` with this scenario's camera rig.
    pub fn vio_config(&self, base: &VioConfig) -> VioConfig {
        let mut cfg = base.clone();
        self.config.camera.apply_to(&mut cfg);
        cfg
    }

    /// Distance travelled along the ground truth, m.
    pub fn path_length(&self) -> f64 {
        self.ground_truth
            .windows(2)
            .map(|w| (w[1].pose.translation - w[0].pose.translation).norm())
            .sum()
    }

    /// Share of observations that belong to distant landmarks.
    pub fn distant_fraction(&self) -> f64 {
        let by_id: BTreeMap<u64, bool> = self.landmarks.iter().map(|l| (l.id, l.distant)).collect();
        let rows = self.tracks.rows();
        if rows.is_empty() {
            return 0.0;
        }
        let far = rows
            .iter()
            .filter(|r| by_id.get(&self.track_landmarks[&r.track_id]).copied().unwrap_or(false))
            .count();
        far as f64 / rows.len() as f64
    }

    /// (angle to the motion axis, range) of every observation, from ground
    /// truth.
    pub fn street_samples(&self) -> Vec<StreetSample> {
        let pos: BTreeMap<u64, Vector3<f64>> = self.landmarks.iter().map(|l| (l.id, l.position)).collect();
        let ext = &self.config.camera.extrinsics;
        let mut out = Vec::new();
        for g in &self.ground_truth {
            let cam = g.pose.compose(ext);
            let cam_from_world = cam.inverse();
            let axis = cam.rotation.conjugate().rotate(&g.velocity);
            for (id, _) in self.tracks.observations_at(g.frame) {
                let Some(lm) = self.track_landmarks.get(&id).and_then(|l| pos.get(l)) else {
                    continue;
                };
                if let Some(s) = street_sample(&cam_from_world.transform_point(lm), &axis) {
                    out.push(s);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::{street_statistics, HistogramSpec};
    use crate::vio::{stack_measurement_model, VioState};

    fn short(kind: TrajectoryKind) -> ScenarioConfig {
        ScenarioConfig {
            trajectory: kind,
            duration: 6.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn rates_validated() {
        let mut c = ScenarioConfig {
            imu_rate: 5.0,
            ..ScenarioConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.imu_rate = 25.0;
        assert!(c.validate().is_err());
        c.imu_rate = 100.0;
        c.corridor.density = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_scenario(&short(TrajectoryKind::SCurve)).unwrap();
        let b = generate_scenario(&short(TrajectoryKind::SCurve)).unwrap();
        assert_eq!(a, b);
        let mut c = short(TrajectoryKind::SCurve);
        c.seed = 2;
        assert_ne!(generate_scenario(&c).unwrap().tracks, a.tracks);
    }

    #[test]
    fn noiseless_measurements_match_ground_truth_model() {
        for kind in [TrajectoryKind::Straight, TrajectoryKind::Turn] {
            let sc = generate_scenario(&short(kind).noiseless()).unwrap();
            let cfg = sc.vio_config(&VioConfig::default());
            let gt = &sc.ground_truth;
            for k in 2..gt.len() {
                let triples = sc.tracks.triples_at(k);
                let mut x = VioState::at_rest(&gt[k].pose, gt[k].velocity);
                x.p2 = gt[k - 1].pose.translation;
                x.q2 = gt[k - 1].pose.rotation;
                x.p3 = gt[k - 2].pose.translation;
                x.q3 = gt[k - 2].pose.rotation;
                let s = stack_measurement_model(&x, &triples, &cfg).unwrap();
                let err = (&s.predicted - s.model.measurement()).abs().max();
                assert!(err < 1e-6, "{kind:?} frame {k}: {err}");
            }
        }
    }

    #[test]
    fn distant_fraction_honoured() {
        let sc = generate_scenario(&short(TrajectoryKind::Straight)).unwrap();
        let f = sc.distant_fraction();
        assert!((f - 0.6).abs() < 0.02, "{f}");
    }

    #[test]
    fn observations_reproject_inside_image() {
        let sc = generate_scenario(&short(TrajectoryKind::Circuit)).unwrap();
        let pos: BTreeMap<u64, Vector3<f64>> = sc.landmarks.iter().map(|l| (l.id, l.position)).collect();
        let rig = &sc.config.camera;
        for g in &sc.ground_truth {
            let p = ProjectionMatrix::from_pose(&g.pose.compose(&rig.extrinsics), &rig.intrinsics);
            for (id, _) in sc.tracks.observations_at(g.frame) {
                let pr = p.project(&pos[&sc.track_landmarks[&id]]);
                assert!(pr.in_front());
                assert!(pr.pixel.x >= 0.0 && pr.pixel.x < rig.width);
                assert!(pr.pixel.y >= 0.0 && pr.pixel.y < rig.height);
            }
        }
    }

    #[test]
    fn poses_are_continuous() {
        let sc = generate_scenario(&short(TrajectoryKind::SCurve)).unwrap();
        let dt = 1.0 / sc.config.camera_rate;
        let vmax = sc.config.speed.mean * (1.0 + sc.config.speed.modulation) * 1.1;
        for w in sc.ground_truth.windows(2) {
            assert!((w[1].pose.translation - w[0].pose.translation).norm() <= vmax * dt * 2.0);
        }
    }

    #[test]
    fn corridor_shows_inverse_angle_depth_relation() {
        let sc = generate_scenario(&short(TrajectoryKind::Straight)).unwrap();
        let stats = street_statistics(&sc.street_samples(), &HistogramSpec::default());
        assert!(stats.spearman.unwrap() < -0.5, "{:?}", stats.spearman);
    }

    #[test]
    fn degrade_imu_is_pure_and_zero_spec_is_identity() {
        let sc = generate_scenario(&short(TrajectoryKind::Straight).noiseless()).unwrap();
        let before = sc.imu.clone();
        assert_eq!(degrade_imu(&sc.imu, &ImuNoiseSpec::zero(), 3), before);
        let noisy = degrade_imu(&sc.imu, &ImuNoiseSpec::low_cost(), 3);
        assert_eq!(sc.imu, before);
        assert_ne!(noisy, before);
    }

    #[test]
    fn no_visible_features_rejected() {
        let mut c = short(TrajectoryKind::Straight);
        c.corridor.distant_fraction = 0.0;
        c.corridor.wall_height_min = 500.0;
        c.corridor.wall_height_max = 600.0;
        assert!(matches!(generate_scenario(&c), Err(Error::Config(_))));
    }
}
