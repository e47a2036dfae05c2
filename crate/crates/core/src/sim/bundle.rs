use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GroundTruthFrame, Landmark, Scenario, ScenarioConfig};
use crate::error::{Error, Result};
use crate::geometry::{Quaternion, RigidPose};
use crate::imu::ImuSample;
use crate::tracks::TrackSet;

pub const BUNDLE_FILES: [&str; 4] = ["ground_truth.csv", "imu.csv", "tracks.csv", "meta.json"];

#[derive(Serialize, Deserialize)]
struct GtRow {
    frame: usize,
    t: f64,
    px: f64,
    py: f64,
    pz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    vx: f64,
    vy: f64,
    vz: f64,
}

#[derive(Serialize, Deserialize)]
struct ImuRow {
    t: f64,
    ax: f64,
    ay: f64,
    az: f64,
    gx: f64,
    gy: f64,
    gz: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ScenarioConfig,
    frames: usize,
    observations: usize,
    distant_fraction: f64,
    path_length: f64,
    landmarks: Vec<Landmark>,
    /// `(track_id, landmark_id)`
    track_landmarks: Vec<(u64, u64)>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str, what: &str) -> Result<BufReader<File>> {
    let path = dir.join(name);
    File::open(&path).map(BufReader::new).map_err(|_| Error::MissingFile {
        what: what.into(),
        path,
    })
}

fn parse_err(path: &Path, line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

/// Writes `ground_truth.csv`, `imu.csv`, `tracks.csv` and `meta.json`.
pub fn write_bundle(dir: &Path, sc: &Scenario) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(create(dir, BUNDLE_FILES[0])?);
    for g in &sc.ground_truth {
        let (p, q, v) = (g.pose.translation, g.pose.rotation, g.velocity);
        w.serialize(GtRow {
            frame: g.frame,
            t: g.t,
            px: p.x,
            py: p.y,
            pz: p.z,
            qw: q.w,
            qx: q.x,
            qy: q.y,
            qz: q.z,
            vx: v.x,
            vy: v.y,
            vz: v.z,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(dir, BUNDLE_FILES[1])?);
    for s in &sc.imu {
        w.serialize(ImuRow {
            t: s.t,
            ax: s.accel.x,
            ay: s.accel.y,
            az: s.accel.z,
            gx: s.gyro.x,
            gy: s.gyro.y,
            gz: s.gyro.z,
        })?;
    }
    w.flush()?;
    sc.tracks.write_csv(create(dir, BUNDLE_FILES[2])?)?;
    let meta = Meta {
        config: sc.config.clone(),
        frames: sc.ground_truth.len(),
        observations: sc.tracks.observation_count(),
        distant_fraction: sc.distant_fraction(),
        path_length: sc.path_length(),
        landmarks: sc.landmarks.clone(),
        track_landmarks: sc.track_landmarks.iter().map(|(a, b)| (*a, *b)).collect(),
    };
    serde_json::to_writer_pretty(create(dir, BUNDLE_FILES[3])?, &meta)?;
    Ok(())
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<Scenario> {
    let meta_path = dir.join(BUNDLE_FILES[3]);
    let meta: Meta = serde_json::from_reader(open(dir, BUNDLE_FILES[3], "scenario metadata")?)
        .map_err(|e| parse_err(&meta_path, e.line(), e))?;

    let gt_path = dir.join(BUNDLE_FILES[0]);
    let mut ground_truth = Vec::new();
    let mut rdr = csv::Reader::from_reader(open(dir, BUNDLE_FILES[0], "ground truth")?);
    for (i, r) in rdr.deserialize::<GtRow>().enumerate() {
        let r = r.map_err(|e| parse_err(&gt_path, i + 2, e))?;
        ground_truth.push(GroundTruthFrame {
            frame: r.frame,
            t: r.t,
            pose: RigidPose::new(Quaternion::new(r.qw, r.qx, r.qy, r.qz), Vector3::new(r.px, r.py, r.pz)),
            velocity: Vector3::new(r.vx, r.vy, r.vz),
        });
    }

    let imu_path = dir.join(BUNDLE_FILES[1]);
    let mut imu = Vec::new();
    let mut rdr = csv::Reader::from_reader(open(dir, BUNDLE_FILES[1], "IMU stream")?);
    for (i, r) in rdr.deserialize::<ImuRow>().enumerate() {
        let r = r.map_err(|e| parse_err(&imu_path, i + 2, e))?;
        imu.push(ImuSample {
            t: r.t,
            accel: Vector3::new(r.ax, r.ay, r.az),
            gyro: Vector3::new(r.gx, r.gy, r.gz),
        });
    }
    if imu.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(parse_err(&imu_path, 0, "IMU timestamps must increase"));
    }

    let tracks_path = dir.join(BUNDLE_FILES[2]);
    let tracks = TrackSet::read_csv(open(dir, BUNDLE_FILES[2], "feature tracks")?, &tracks_path)?;
    if ground_truth.len() < 2 {
        return Err(parse_err(&gt_path, 0, "bundle needs at least two frames"));
    }
    Ok(Scenario {
        config: meta.config,
        ground_truth,
        imu,
        tracks,
        landmarks: meta.landmarks,
        track_landmarks: meta.track_landmarks.into_iter().collect::<BTreeMap<_, _>>(),
    })
}
