//! Command-line front end: `simulate`, `run`, `eval`, `stats` and `mc`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::confidence::{street_statistics, ConfidenceMode, HistogramSpec};
use crate::eval::{
    kitti_errors, monte_carlo, read_trajectory_csv, write_plot_data, write_trajectory_csv, MonteCarloReport,
    MonteCarloSpec, SegmentSummary,
};
use crate::geometry::RigidPose;
use crate::kitti_io;
use crate::par::{self, Execution};
use crate::sim::{read_bundle, write_bundle};
use crate::sim::{generate_scenario, ScenarioConfig, TrajectoryKind};
use crate::vio::{run_sequence, SequenceInput, TrajectoryPoint, VioConfig};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

/// Runs whose failure share exceeds this make `mc` exit with [`EXIT_PARTIAL`].
pub const MAX_FAILED_FRACTION: f64 = 0.2;

pub const KITTI_SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub trajectories: Vec<TrajectoryKind>,
    pub modes: Vec<ConfidenceMode>,
    pub runs: usize,
    pub base_seed: u64,
    /// m
    pub segment_length: f64,
    /// worker threads, 0 = one per core
    pub jobs: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trajectories: vec![TrajectoryKind::Straight, TrajectoryKind::SCurve],
            modes: ConfidenceMode::ALL.to_vec(),
            runs: 10,
            base_seed: 1,
            segment_length: 100.0,
            jobs: 0,
        }
    }
}

/// Everything a subcommand may need; unknown keys (such as `_doc`) are ignored.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub scenario: ScenarioConfig,
    pub vio: VioConfig,
    pub monte_carlo: MonteCarloConfig,
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile {
            what: "configuration".into(),
            path: path.to_path_buf(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "trivio", version, about = "Trifocal UKF visual-inertial odometry with feature confidence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario bundle.
    Simulate(CommonArgs),
    /// Run the estimator on a scenario bundle or a KITTI raw drive.
    Run(RunArgs),
    /// KITTI-style segment errors of a run directory.
    Eval(EvalArgs),
    /// Angle/depth statistics of a scenario bundle.
    Stats(CommonArgs),
    /// Paired Monte Carlo comparison of the confidence modes.
    Mc(McArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub mode: Option<ConfidenceMode>,
    /// track file for KITTI input (default: `<input>/tracks.csv`)
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// rectified KITTI camera index the tracks refer to
    #[arg(long, default_value_t = 0)]
    pub camera: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "segment-len")]
    pub segment_len: Option<f64>,
    /// evaluate every KITTI segment length from 100 to 800 m
    #[arg(long)]
    pub all_lengths: bool,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long = "segment-len")]
    pub segment_len: Option<f64>,
    #[arg(long)]
    pub mode: Option<ConfidenceMode>,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl From<Error> for CliError {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::Numerical(_) | Error::NumericalAtFrame { .. } => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        Self { code, error }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

pub fn execute(cli: &Cli) -> std::result::Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Mc(a) => cmd_mc(a).map(|_| ()),
    }
}

/// Runs the parsed command line and returns the process exit code.
pub fn main_with(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.error);
            e.code
        }
    }
}

fn require_input(a: &CommonArgs) -> Result<&Path> {
    a.input
        .as_deref()
        .ok_or_else(|| Error::InvalidInput("--input is required".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(a: &CommonArgs) -> std::result::Result<(), CliError> {
    let mut cfg = AppConfig::load(a.config.as_deref())?.scenario;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let sc = generate_scenario(&cfg)?;
    write_bundle(&a.out, &sc)?;
    log::info!(
        "wrote {} frames, {} observations to {}",
        sc.ground_truth.len(),
        sc.tracks.observation_count(),
        a.out.display()
    );
    Ok(())
}

fn is_bundle(dir: &Path) -> bool {
    dir.join("meta.json").exists()
}

struct LoadedRun {
    cfg: VioConfig,
    input: SequenceInput,
    ground_truth: Vec<(usize, f64, RigidPose)>,
}

fn load_run_input(a: &RunArgs, base: &VioConfig) -> Result<LoadedRun> {
    let dir = require_input(&a.common)?;
    if !dir.is_dir() {
        return Err(Error::MissingFile {
            what: "input directory".into(),
            path: dir.to_path_buf(),
        });
    }
    if is_bundle(dir) {
        let sc = read_bundle(dir)?;
        let ground_truth = sc.ground_truth.iter().map(|g| (g.frame, g.t, g.pose)).collect();
        Ok(LoadedRun {
            cfg: sc.vio_config(base),
            input: sc.sequence_input(),
            ground_truth,
        })
    } else {
        let seq = kitti_io::load_sequence_with_camera(dir, a.camera)?;
        let tracks_path = a.tracks.clone().unwrap_or_else(|| dir.join("tracks.csv"));
        let tracks = kitti_io::load_tracks(&tracks_path)?;
        let mut cfg = base.clone();
        seq.calibration.apply_to(&mut cfg)?;
        let ground_truth = seq
            .ground_truth
            .iter()
            .zip(&seq.times)
            .enumerate()
            .map(|(i, (p, &t))| (i, t, *p))
            .collect();
        Ok(LoadedRun {
            cfg,
            input: seq.sequence_input(tracks),
            ground_truth,
        })
    }
}

fn ground_truth_points(gt: &[(usize, f64, RigidPose)]) -> Vec<TrajectoryPoint> {
    gt.iter()
        .map(|&(frame, t, pose)| TrajectoryPoint {
            frame,
            t,
            pose,
            velocity: nalgebra::Vector3::zeros(),
        })
        .collect()
}

#[derive(Serialize)]
struct RunDiagnostics<'a> {
    mode: ConfidenceMode,
    frames: usize,
    updates: usize,
    config: &'a VioConfig,
    per_frame: &'a [crate::vio::FrameDiagnostics],
}

pub fn cmd_run(a: &RunArgs) -> std::result::Result<(), CliError> {
    let mut base = AppConfig::load(a.common.config.as_deref())?.vio;
    if let Some(mode) = a.mode {
        base.mode = mode;
    }
    if let Some(seed) = a.common.seed {
        base.ransac.seed = seed;
    }
    let loaded = load_run_input(a, &base)?;
    let out = run_sequence(&loaded.cfg, &loaded.input, Execution::Sequential)?;
    fs::create_dir_all(&a.common.out)?;
    let dir = &a.common.out;
    write_trajectory_csv(BufWriter::new(fs::File::create(dir.join("trajectory.csv"))?), &out.trajectory)?;
    write_trajectory_csv(
        BufWriter::new(fs::File::create(dir.join("ground_truth.csv"))?),
        &ground_truth_points(&loaded.ground_truth),
    )?;
    let diag = RunDiagnostics {
        mode: loaded.cfg.mode,
        frames: out.trajectory.len(),
        updates: out.diagnostics.iter().filter(|d| d.updated).count(),
        config: &loaded.cfg,
        per_frame: &out.diagnostics,
    };
    write_json(&dir.join("diagnostics.json"), &diag)?;
    let gt: Vec<RigidPose> = loaded.ground_truth.iter().map(|g| g.2).collect();
    write_plot_data(dir, &out.trajectory, Some(&gt), &out.diagnostics)?;
    log::info!("mode {}: {} frames, {} updates", diag.mode, diag.frames, diag.updates);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub summaries: Vec<SegmentSummary>,
}

pub fn cmd_eval(a: &EvalArgs) -> std::result::Result<(), CliError> {
    let dir = require_input(&a.common)?;
    let est = read_trajectory_csv(&dir.join("trajectory.csv"))?;
    let gt = read_trajectory_csv(&dir.join("ground_truth.csv"))?;
    if est.len() != gt.len() || est.iter().zip(&gt).any(|(e, g)| e.0 != g.0) {
        return Err(Error::InvalidInput("trajectory and ground truth frames differ".into()).into());
    }
    let est: Vec<RigidPose> = est.into_iter().map(|e| e.2).collect();
    let gt: Vec<RigidPose> = gt.into_iter().map(|g| g.2).collect();
    let lengths: Vec<f64> = if a.all_lengths {
        KITTI_SEGMENT_LENGTHS.to_vec()
    } else {
        vec![a.segment_len.unwrap_or(100.0)]
    };
    let summaries = lengths
        .iter()
        .map(|&l| kitti_errors(&est, &gt, l))
        .collect::<Result<Vec<_>>>()?;
    for s in &summaries {
        match &s.diagnostic {
            Some(d) => log::warn!("{} m: {d}", s.segment_length),
            None => log::info!(
                "{} m: rotation {:.4} 1e-2 deg/m, translation {:.3} %",
                s.segment_length,
                s.rotation,
                s.translation
            ),
        }
    }
    fs::create_dir_all(&a.common.out)?;
    write_json(
        &a.common.out.join("errors.json"),
        &EvalReport {
            frames: est.len(),
            summaries,
        },
    )?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsReport {
    pub samples: usize,
    pub spearman: Option<f64>,
    pub distant_fraction: f64,
}

pub fn cmd_stats(a: &CommonArgs) -> std::result::Result<(), CliError> {
    let sc = read_bundle(require_input(a)?)?;
    let stats = street_statistics(&sc.street_samples(), &HistogramSpec::default());
    fs::create_dir_all(&a.out)?;
    stats.write_csv(BufWriter::new(fs::File::create(a.out.join("street_histogram.csv"))?))?;
    write_json(
        &a.out.join("street_stats.json"),
        &StatsReport {
            samples: stats.samples,
            spearman: stats.spearman,
            distant_fraction: sc.distant_fraction(),
        },
    )?;
    Ok(())
}

pub fn mc_spec(app: &AppConfig, a: &McArgs) -> MonteCarloSpec {
    let mc = &app.monte_carlo;
    let scenarios = mc
        .trajectories
        .iter()
        .map(|&kind| ScenarioConfig {
            trajectory: kind,
            ..app.scenario.clone()
        })
        .collect();
    let modes = match a.mode {
        Some(ConfidenceMode::Off) | None => mc.modes.clone(),
        Some(m) => vec![ConfidenceMode::Off, m],
    };
    MonteCarloSpec {
        scenarios,
        vio: app.vio.clone(),
        modes,
        runs: a.runs.unwrap_or(mc.runs),
        base_seed: a.common.seed.unwrap_or(mc.base_seed),
        segment_length: a.segment_len.unwrap_or(mc.segment_length),
    }
}

fn comparison_table(report: &MonteCarloReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "mode",
        "pairs",
        "improved",
        "worse",
        "ties",
        "median_translation",
        "baseline_median_translation",
        "mean_translation_delta",
        "rotation_relative_difference",
    ])?;
    for c in &report.comparisons {
        w.write_record(&[
            c.mode.to_string(),
            c.pairs.to_string(),
            c.improved.to_string(),
            c.worse.to_string(),
            c.ties.to_string(),
            c.median_translation.to_string(),
            c.baseline_median_translation.to_string(),
            c.translation_delta.mean.to_string(),
            c.rotation_relative_difference.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn cmd_mc(a: &McArgs) -> std::result::Result<MonteCarloReport, CliError> {
    let app = AppConfig::load(a.common.config.as_deref())?;
    let spec = mc_spec(&app, a);
    let report = par::with_threads(app.monte_carlo.jobs, || monte_carlo(&spec, Execution::Parallel))?;
    fs::create_dir_all(&a.common.out)?;
    write_json(&a.common.out.join("mc_report.json"), &report)?;
    fs::write(a.common.out.join("comparison.csv"), comparison_table(&report)?)?;
    for c in &report.comparisons {
        log::info!(
            "{}: improved {}/{} runs, median translation {:.3} % vs {:.3} %",
            c.mode,
            c.improved,
            c.pairs,
            c.median_translation,
            c.baseline_median_translation
        );
    }
    if report.failed_fraction() > MAX_FAILED_FRACTION {
        return Err(CliError {
            code: EXIT_PARTIAL,
            error: Error::Numerical(format!(
                "{} of {} Monte Carlo runs failed",
                report.failed_runs, report.total_runs
            )),
        });
    }
    Ok(report)
}

/// Initializes logging from `VIO_LOG_LEVEL` (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("VIO_LOG_LEVEL", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}
