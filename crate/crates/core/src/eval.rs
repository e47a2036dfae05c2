//! KITTI-style segment errors, Monte Carlo aggregation over paired runs and
//! the trajectory / plot-data writers.

use std::io::Write;
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceMode;
use crate::error::{Error, Result};
use crate::geometry::RigidPose;
use crate::par::Execution;
use crate::sim::{generate_scenario, ScenarioConfig};
use crate::vio::{run_sequence, FrameDiagnostics, TrajectoryPoint, VioConfig};

/// Error of one segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentError {
    pub first_frame: usize,
    /// m
    pub length: f64,
    /// deg/m
    pub rotation: f64,
    /// fraction of the segment length (0.01 = 1 %)
    pub translation: f64,
}

/// Segment errors and their means in table units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub segment_length: f64,
    pub segments: Vec<SegmentError>,
    /// 1e-2 deg/m
    pub rotation: f64,
    /// %
    pub translation: f64,
    /// why no segment was evaluated
    pub diagnostic: Option<String>,
}

impl SegmentSummary {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Cumulative ground-truth path length at every frame.
pub fn trajectory_distances(gt: &[RigidPose]) -> Vec<f64> {
    let mut d = Vec::with_capacity(gt.len());
    let mut acc = 0.0;
    for (i, p) in gt.iter().enumerate() {
        if i > 0 {
            acc += (p.translation - gt[i - 1].translation).norm();
        }
        d.push(acc);
    }
    d
}

fn relative(a: &RigidPose, b: &RigidPose) -> Matrix4<f64> {
    let am = a.to_matrix();
    let inv = am.try_inverse().unwrap_or_else(Matrix4::identity);
    inv * b.to_matrix()
}

/// Rotation angle of the 3x3 block, rad (`atan2` form of
/// `acos((tr R - 1) / 2)`, exact near zero).
fn rotation_angle(m: &Matrix4<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let s = nalgebra::Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    (0.5 * s).atan2(0.5 * (tr - 1.0))
}

/// Relative-pose errors of every segment of `segment_length` metres
/// starting at any frame; `est` and `gt` are aligned by index.
pub fn kitti_errors(est: &[RigidPose], gt: &[RigidPose], segment_length: f64) -> Result<SegmentSummary> {
    if est.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "estimate has {} poses, ground truth {}",
            est.len(),
            gt.len()
        )));
    }
    if !(segment_length > 0.0) {
        return Err(Error::InvalidInput("segment length must be positive".into()));
    }
    let dist = trajectory_distances(gt);
    let mut segments = Vec::new();
    for first in 0..gt.len() {
        let target = dist[first] + segment_length;
        let Some(last) = (first..gt.len()).find(|&i| dist[i] > target) else {
            break;
        };
        let dg = relative(&gt[first], &gt[last]);
        let de = relative(&est[first], &est[last]);
        let err = de.try_inverse().unwrap_or_else(Matrix4::identity) * dg;
        let t = err.fixed_view::<3, 1>(0, 3).norm();
        segments.push(SegmentError {
            first_frame: first,
            length: segment_length,
            rotation: rotation_angle(&err).to_degrees() / segment_length,
            translation: t / segment_length,
        });
    }
    let n = segments.len() as f64;
    let (rotation, translation, diagnostic) = if segments.is_empty() {
        (
            0.0,
            0.0,
            Some(format!(
                "trajectory length {:.1} m is shorter than the {segment_length} m segment",
                dist.last().copied().unwrap_or(0.0)
            )),
        )
    } else {
        (
            segments.iter().map(|s| s.rotation).sum::<f64>() / n * 100.0,
            segments.iter().map(|s| s.translation).sum::<f64>() / n * 100.0,
            None,
        )
    };
    Ok(SegmentSummary {
        segment_length,
        segments,
        rotation,
        translation,
        diagnostic,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                median: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            n,
            mean,
            median: median(xs),
            std: var.sqrt(),
        }
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Monte Carlo protocol: every run draws one seed, generates every scenario
/// with it and runs each mode on the same data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub scenarios: Vec<ScenarioConfig>,
    pub vio: VioConfig,
    pub modes: Vec<ConfidenceMode>,
    pub runs: usize,
    pub base_seed: u64,
    pub segment_length: f64,
}

impl MonteCarloSpec {
    pub fn seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

/// One (run, scenario, mode) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub scenario: usize,
    pub mode: ConfidenceMode,
    /// 1e-2 deg/m
    pub rotation: f64,
    /// %
    pub translation: f64,
    pub segments: usize,
    pub updates: usize,
    pub error: Option<String>,
}

/// Mode metrics pooled over the scenarios of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledRun {
    pub run: usize,
    pub seed: u64,
    pub mode: ConfidenceMode,
    pub rotation: f64,
    pub translation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: ConfidenceMode,
    pub rotation: Stats,
    pub translation: Stats,
}

/// Paired comparison of a mode against the `off` baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub mode: ConfidenceMode,
    pub pairs: usize,
    /// runs whose translation error is strictly below the baseline's
    pub improved: usize,
    pub worse: usize,
    pub ties: usize,
    /// mode minus baseline, %
    pub translation_delta: Stats,
    /// |median rotation / baseline median rotation - 1|
    pub rotation_relative_difference: f64,
    pub median_translation: f64,
    pub baseline_median_translation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub records: Vec<RunRecord>,
    pub pooled: Vec<PooledRun>,
    pub aggregates: Vec<ModeAggregate>,
    pub comparisons: Vec<PairedComparison>,
    pub failed_runs: usize,
    pub total_runs: usize,
}

impl MonteCarloReport {
    pub fn failed_fraction(&self) -> f64 {
        if self.total_runs == 0 {
            0.0
        } else {
            self.failed_runs as f64 / self.total_runs as f64
        }
    }

    pub fn comparison(&self, mode: ConfidenceMode) -> Option<&PairedComparison> {
        self.comparisons.iter().find(|c| c.mode == mode)
    }

    pub fn aggregate(&self, mode: ConfidenceMode) -> Option<&ModeAggregate> {
        self.aggregates.iter().find(|a| a.mode == mode)
    }
}

fn run_one(spec: &MonteCarloSpec, run: usize, scenario: usize) -> Vec<RunRecord> {
    let seed = spec.seed(run);
    let mut sc_cfg = spec.scenarios[scenario].clone();
    sc_cfg.seed = seed;
    let record = |mode, res: Result<(f64, f64, usize, usize)>| match res {
        Ok((rotation, translation, segments, updates)) => RunRecord {
            run,
            seed,
            scenario,
            mode,
            rotation,
            translation,
            segments,
            updates,
            error: None,
        },
        Err(e) => RunRecord {
            run,
            seed,
            scenario,
            mode,
            rotation: f64::NAN,
            translation: f64::NAN,
            segments: 0,
            updates: 0,
            error: Some(e.to_string()),
        },
    };
    let sc = match generate_scenario(&sc_cfg) {
        Ok(s) => s,
        Err(e) => {
            let msg = e.to_string();
            return spec
                .modes
                .iter()
                .map(|&m| record(m, Err(Error::Config(msg.clone()))))
                .collect();
        }
    };
    let input = sc.sequence_input();
    let gt: Vec<RigidPose> = sc.ground_truth.iter().map(|g| g.pose).collect();
    spec.modes
        .iter()
        .map(|&mode| {
            let mut cfg = sc.vio_config(&spec.vio);
            cfg.mode = mode;
            cfg.ransac.seed = seed;
            let res = run_sequence(&cfg, &input, Execution::Sequential).and_then(|out| {
                let est: Vec<RigidPose> = out.trajectory.iter().map(|p| p.pose).collect();
                let e = kitti_errors(&est, &gt, spec.segment_length)?;
                if e.is_empty() {
                    return Err(Error::InvalidInput(e.diagnostic.unwrap_or_default()));
                }
                let updates = out.diagnostics.iter().filter(|d| d.updated).count();
                Ok((e.rotation, e.translation, e.segments.len(), updates))
            });
            record(mode, res)
        })
        .collect()
}

/// Runs the protocol; `(run, scenario)` units execute in parallel.
pub fn monte_carlo(spec: &MonteCarloSpec, execution: Execution) -> Result<MonteCarloReport> {
    if spec.runs == 0 {
        return Err(Error::InvalidInput("Monte Carlo needs at least one run".into()));
    }
    if spec.scenarios.is_empty() || spec.modes.is_empty() {
        return Err(Error::InvalidInput("Monte Carlo needs scenarios and modes".into()));
    }
    let units: Vec<(usize, usize)> = (0..spec.runs)
        .flat_map(|r| (0..spec.scenarios.len()).map(move |s| (r, s)))
        .collect();
    let records: Vec<RunRecord> = execution
        .map(&units, |&(r, s)| run_one(spec, r, s))
        .into_iter()
        .flatten()
        .collect();
    Ok(aggregate(spec, records))
}

/// Pools scenarios per run (mean over scenarios), then aggregates per mode
/// and pairs every mode with the `off` baseline. A run fails as a whole if
/// any of its records failed.
pub fn aggregate(spec: &MonteCarloSpec, records: Vec<RunRecord>) -> MonteCarloReport {
    let failed: Vec<bool> = (0..spec.runs)
        .map(|r| records.iter().any(|x| x.run == r && x.error.is_some()))
        .collect();
    let mut pooled = Vec::new();
    for r in (0..spec.runs).filter(|&r| !failed[r]) {
        for &mode in &spec.modes {
            let rs: Vec<&RunRecord> = records.iter().filter(|x| x.run == r && x.mode == mode).collect();
            let n = rs.len() as f64;
            pooled.push(PooledRun {
                run: r,
                seed: spec.seed(r),
                mode,
                rotation: rs.iter().map(|x| x.rotation).sum::<f64>() / n,
                translation: rs.iter().map(|x| x.translation).sum::<f64>() / n,
            });
        }
    }
    let of_mode = |m: ConfidenceMode| -> Vec<&PooledRun> { pooled.iter().filter(|p| p.mode == m).collect() };
    let aggregates: Vec<ModeAggregate> = spec
        .modes
        .iter()
        .map(|&mode| {
            let ps = of_mode(mode);
            ModeAggregate {
                mode,
                rotation: Stats::of(&ps.iter().map(|p| p.rotation).collect::<Vec<_>>()),
                translation: Stats::of(&ps.iter().map(|p| p.translation).collect::<Vec<_>>()),
            }
        })
        .collect();
    let mut comparisons = Vec::new();
    if spec.modes.contains(&ConfidenceMode::Off) {
        let base = of_mode(ConfidenceMode::Off);
        for &mode in spec.modes.iter().filter(|m| **m != ConfidenceMode::Off) {
            let ps = of_mode(mode);
            let deltas: Vec<f64> = ps
                .iter()
                .zip(&base)
                .map(|(p, b)| p.translation - b.translation)
                .collect();
            let med = |v: &[&PooledRun], f: fn(&PooledRun) -> f64| median(&v.iter().map(|p| f(p)).collect::<Vec<_>>());
            let base_rot = med(&base, |p| p.rotation);
            comparisons.push(PairedComparison {
                mode,
                pairs: deltas.len(),
                improved: deltas.iter().filter(|d| **d < 0.0).count(),
                worse: deltas.iter().filter(|d| **d > 0.0).count(),
                ties: deltas.iter().filter(|d| **d == 0.0).count(),
                translation_delta: Stats::of(&deltas),
                rotation_relative_difference: (med(&ps, |p| p.rotation) / base_rot - 1.0).abs(),
                median_translation: med(&ps, |p| p.translation),
                baseline_median_translation: med(&base, |p| p.translation),
            });
        }
    }
    MonteCarloReport {
        failed_runs: failed.iter().filter(|f| **f).count(),
        total_runs: spec.runs,
        records,
        pooled,
        aggregates,
        comparisons,
    }
}

/// `frame,t,px,py,pz,qw,qx,qy,qz`.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &[TrajectoryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frame", "t", "px", "py", "pz", "qw", "qx", "qy", "qz"])?;
    for p in traj {
        let (t, q) = (p.pose.translation, p.pose.rotation);
        w.write_record(&[
            p.frame.to_string(),
            p.t.to_string(),
            t.x.to_string(),
            t.y.to_string(),
            t.z.to_string(),
            q.w.to_string(),
            q.x.to_string(),
            q.y.to_string(),
            q.z.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`] (also accepts
/// the ground-truth bundle layout, extra columns are ignored).
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<(usize, f64, RigidPose)>> {
    #[derive(Deserialize)]
    struct Row {
        frame: usize,
        t: f64,
        px: f64,
        py: f64,
        pz: f64,
        qw: f64,
        qx: f64,
        qy: f64,
        qz: f64,
    }
    let file = std::fs::File::open(path).map_err(|_| Error::MissingFile {
        what: "trajectory".into(),
        path: path.to_path_buf(),
    })?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, r) in rdr.deserialize::<Row>().enumerate() {
        let r = r.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        out.push((
            r.frame,
            r.t,
            RigidPose::new(
                crate::geometry::Quaternion::new(r.qw, r.qx, r.qy, r.qz),
                nalgebra::Vector3::new(r.px, r.py, r.pz),
            ),
        ));
    }
    Ok(out)
}

/// Writes `plot_data/path_xy.csv`, `plot_data/tau.csv` and
/// `plot_data/confidence.csv` under `dir`.
pub fn write_plot_data(
    dir: &Path,
    est: &[TrajectoryPoint],
    gt: Option<&[RigidPose]>,
    diagnostics: &[FrameDiagnostics],
) -> Result<()> {
    let pd = dir.join("plot_data");
    std::fs::create_dir_all(&pd)?;
    let mut w = csv::Writer::from_path(pd.join("path_xy.csv"))?;
    w.write_record(["frame", "est_x", "est_y", "gt_x", "gt_y"])?;
    for (i, p) in est.iter().enumerate() {
        let (gx, gy) = match gt.and_then(|g| g.get(i)) {
            Some(g) => (g.translation.x.to_string(), g.translation.y.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record(&[
            p.frame.to_string(),
            p.pose.translation.x.to_string(),
            p.pose.translation.y.to_string(),
            gx,
            gy,
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(pd.join("tau.csv"))?;
    w.write_record(["frame", "t", "tau", "velocity_norm", "gyro_norm"])?;
    for d in diagnostics {
        w.write_record(&[
            d.frame.to_string(),
            d.t.to_string(),
            d.tau.to_string(),
            d.velocity_norm.to_string(),
            d.gyro_norm.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(pd.join("confidence.csv"))?;
    w.write_record(["frame", "t", "mean_confidence", "mean_scale", "inliers"])?;
    for d in diagnostics {
        w.write_record(&[
            d.frame.to_string(),
            d.t.to_string(),
            d.mean_confidence.to_string(),
            d.mean_scale.to_string(),
            d.inliers.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
