//! KITTI raw sequences: OXTS navigation records, timestamps and calibration.
//!
//! Expected layout (calibration files may live in the drive directory or its
//! parent, as in the raw download):
//!
//! ```text
//! <drive>/oxts/timestamps.txt
//! <drive>/oxts/data/0000000000.txt ...
//! <drive or parent>/calib_imu_to_velo.txt
//! <drive or parent>/calib_velo_to_cam.txt
//! <drive or parent>/calib_cam_to_cam.txt
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Quaternion, RigidPose};
use crate::imu::ImuSample;
use crate::tracks::TrackSet;
use crate::vio::{SequenceInput, VioConfig, VioState};
use crate::{Error, Result};

pub const EARTH_RADIUS: f64 = 6_378_137.0;
pub const OXTS_FIELDS: usize = 30;

/// Leading fields of an OXTS line. Angles in rad, accelerations in m/s^2,
/// rates in rad/s; the body frame is forward-left-up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OxtsRecord {
    /// degrees
    pub lat: f64,
    /// degrees
    pub lon: f64,
    /// m
    pub alt: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub vn: f64,
    pub ve: f64,
    pub vf: f64,
    pub vl: f64,
    pub vu: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

impl OxtsRecord {
    pub fn parse(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != OXTS_FIELDS {
            return Err(format!("expected {OXTS_FIELDS} fields, found {}", fields.len()));
        }
        let mut v = [0.0; OXTS_FIELDS];
        for (i, f) in fields.iter().enumerate() {
            v[i] = f.parse().map_err(|_| format!("field {}: cannot parse {f:?}", i + 1))?;
        }
        Ok(Self {
            lat: v[0],
            lon: v[1],
            alt: v[2],
            roll: v[3],
            pitch: v[4],
            yaw: v[5],
            vn: v[6],
            ve: v[7],
            vf: v[8],
            vl: v[9],
            vu: v[10],
            ax: v[11],
            ay: v[12],
            az: v[13],
            wx: v[17],
            wy: v[18],
            wz: v[19],
        })
    }

    /// `world_from_imu` rotation, world axes east-north-up.
    pub fn attitude(&self) -> Quaternion {
        Quaternion::from_euler(self.roll, self.pitch, self.yaw)
    }

    /// World-frame velocity (east, north, up).
    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.ve, self.vn, self.vu)
    }

    pub fn imu_sample(&self, t: f64) -> ImuSample {
        ImuSample {
            t,
            accel: Vector3::new(self.ax, self.ay, self.az),
            gyro: Vector3::new(self.wx, self.wy, self.wz),
        }
    }
}

/// Mercator scale for a reference latitude in degrees.
pub fn mercator_scale(lat0: f64) -> f64 {
    lat0.to_radians().cos()
}

/// Mercator easting/northing in m.
pub fn mercator(lat: f64, lon: f64, scale: f64) -> (f64, f64) {
    let mx = scale * lon.to_radians() * EARTH_RADIUS;
    let my = scale * EARTH_RADIUS * ((90.0 + lat).to_radians() / 2.0).tan().ln();
    (mx, my)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    /// rectified intrinsics keyed by camera index
    pub intrinsics: HashMap<usize, CameraIntrinsics>,
    /// camera the extrinsic refers to
    pub camera: usize,
    pub imu_from_camera: RigidPose,
}

impl CalibrationSet {
    pub fn camera_intrinsics(&self) -> Result<CameraIntrinsics> {
        self.intrinsics
            .get(&self.camera)
            .copied()
            .ok_or_else(|| Error::Config(format!("no intrinsics for camera {}", self.camera)))
    }

    pub fn apply_to(&self, cfg: &mut VioConfig) -> Result<()> {
        cfg.intrinsics = self.camera_intrinsics()?;
        cfg.extrinsics = self.imu_from_camera;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KittiSequence {
    /// seconds since the first record
    pub times: Vec<f64>,
    pub imu: Vec<ImuSample>,
    pub calibration: CalibrationSet,
    /// `world_from_imu`, translation relative to the first frame
    pub ground_truth: Vec<RigidPose>,
    pub velocities: Vec<Vector3<f64>>,
    pub records: Vec<OxtsRecord>,
}

impl KittiSequence {
    pub fn path_length(&self) -> f64 {
        self.ground_truth
            .windows(2)
            .map(|w| (w[1].translation - w[0].translation).norm())
            .sum()
    }

    pub fn initial_state(&self) -> VioState {
        VioState::at_rest(&self.ground_truth[0], self.velocities[0])
    }

    pub fn sequence_input(&self, tracks: TrackSet) -> SequenceInput {
        SequenceInput {
            times: self.times.clone(),
            imu: self.imu.clone(),
            tracks,
            initial: self.initial_state(),
        }
    }
}

fn read_required(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|_| Error::MissingFile {
        what: what.into(),
        path: path.to_path_buf(),
    })
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// `key: values` calibration file.
fn read_calib(path: &Path, what: &str) -> Result<HashMap<String, (usize, Vec<f64>)>> {
    let text = read_required(path, what)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let values: std::result::Result<Vec<f64>, _> =
            rest.split_whitespace().map(str::parse::<f64>).collect();
        // calib_time and similar entries are not numeric
        if let Ok(v) = values {
            out.insert(key.trim().to_string(), (i + 1, v));
        }
    }
    Ok(out)
}

fn calib_values<'a>(
    entries: &'a HashMap<String, (usize, Vec<f64>)>,
    path: &Path,
    key: &str,
    len: usize,
) -> Result<&'a [f64]> {
    match entries.get(key) {
        Some((_, v)) if v.len() == len => Ok(v),
        Some((line, v)) => Err(parse_err(path, *line, format!("{key}: expected {len} values, found {}", v.len()))),
        None => Err(parse_err(path, 0, format!("missing entry {key}"))),
    }
}

fn rigid_from_calib(entries: &HashMap<String, (usize, Vec<f64>)>, path: &Path) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let r = Matrix3::from_row_slice(calib_values(entries, path, "R", 9)?);
    let t = Vector3::from_column_slice(calib_values(entries, path, "T", 3)?);
    check_rotation(&r, path)?;
    Ok((r, t))
}

fn check_rotation(r: &Matrix3<f64>, path: &Path) -> Result<()> {
    let defect = (r.transpose() * r - Matrix3::identity()).abs().max();
    if defect > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(parse_err(path, 0, format!("rotation is not orthonormal (defect {defect:e})")));
    }
    Ok(())
}

fn find_calib(dir: &Path, name: &str) -> PathBuf {
    let local = dir.join(name);
    if local.exists() {
        return local;
    }
    match dir.parent() {
        Some(parent) if parent.join(name).exists() => parent.join(name),
        _ => local,
    }
}

/// Reads the three calibration files around `dir` for rectified camera `camera`.
pub fn load_calibration(dir: &Path, camera: usize) -> Result<CalibrationSet> {
    let imu_velo_path = find_calib(dir, "calib_imu_to_velo.txt");
    let velo_cam_path = find_calib(dir, "calib_velo_to_cam.txt");
    let cam_path = find_calib(dir, "calib_cam_to_cam.txt");
    let imu_velo = read_calib(&imu_velo_path, "IMU-to-Velodyne calibration")?;
    let velo_cam = read_calib(&velo_cam_path, "Velodyne-to-camera calibration")?;
    let cam = read_calib(&cam_path, "camera-to-camera calibration")?;

    let (r_vi, t_vi) = rigid_from_calib(&imu_velo, &imu_velo_path)?;
    let (r_cv, t_cv) = rigid_from_calib(&velo_cam, &velo_cam_path)?;
    let r_rect = Matrix3::from_row_slice(calib_values(&cam, &cam_path, "R_rect_00", 9)?);
    check_rotation(&r_rect, &cam_path)?;

    let mut intrinsics = HashMap::new();
    let mut offsets = HashMap::new();
    for i in 0..4 {
        let key = format!("P_rect_{i:02}");
        if !cam.contains_key(&key) {
            continue;
        }
        let p = Matrix3x4::from_row_slice(calib_values(&cam, &cam_path, &key, 12)?);
        let k = CameraIntrinsics::new(p[(0, 0)], p[(1, 1)], p[(0, 2)], p[(1, 2)])
            .map_err(|e| parse_err(&cam_path, cam[&key].0, e.to_string()))?;
        let offset = Vector3::new(p[(0, 3)] / p[(0, 0)], p[(1, 3)] / p[(1, 1)], p[(2, 3)]);
        intrinsics.insert(i, k);
        offsets.insert(i, offset);
    }
    let Some(offset) = offsets.get(&camera) else {
        return Err(parse_err(&cam_path, 0, format!("missing entry P_rect_{camera:02}")));
    };

    let velo_from_imu = RigidPose::new(Quaternion::from_dcm(&r_vi), t_vi);
    let cam0_from_velo = RigidPose::new(Quaternion::from_dcm(&r_cv), t_cv);
    let rect_from_cam0 = RigidPose::new(Quaternion::from_dcm(&r_rect), Vector3::zeros());
    let cam_from_rect = RigidPose::new(Quaternion::IDENTITY, *offset);
    let cam_from_imu = cam_from_rect
        .compose(&rect_from_cam0)
        .compose(&cam0_from_velo)
        .compose(&velo_from_imu);
    Ok(CalibrationSet {
        intrinsics,
        camera,
        imu_from_camera: cam_from_imu.inverse(),
    })
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), "%Y-%m-%d %H:%M:%S%.f").ok()
}

fn load_timestamps(path: &Path) -> Result<Vec<f64>> {
    let text = read_required(path, "OXTS timestamps")?;
    let mut t0 = None;
    let mut times: Vec<f64> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let stamp = parse_timestamp(line).ok_or_else(|| parse_err(path, i + 1, format!("bad timestamp {line:?}")))?;
        let t0 = *t0.get_or_insert(stamp);
        let dt = stamp - t0;
        let t = dt.num_seconds() as f64 + dt.subsec_nanos() as f64 * 1e-9;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(parse_err(path, i + 1, "timestamps must increase strictly"));
            }
        }
        times.push(t);
    }
    Ok(times)
}

fn load_oxts_record(path: &Path) -> Result<OxtsRecord> {
    let text = read_required(path, "OXTS record")?;
    let (line_no, line) = text
        .lines()
        .enumerate()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(path, 1, "empty OXTS record"))?;
    OxtsRecord::parse(line).map_err(|r| parse_err(path, line_no + 1, r))
}

/// Ground-truth poses from OXTS via a Mercator plane anchored at the first
/// record; rotations stay in the local east-north-up frame.
pub fn oxts_poses(records: &[OxtsRecord]) -> Vec<RigidPose> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let scale = mercator_scale(first.lat);
    let (x0, y0) = mercator(first.lat, first.lon, scale);
    records
        .iter()
        .map(|r| {
            let (x, y) = mercator(r.lat, r.lon, scale);
            RigidPose::new(r.attitude(), Vector3::new(x - x0, y - y0, r.alt - first.alt))
        })
        .collect()
}

pub fn load_sequence(dir: &Path) -> Result<KittiSequence> {
    load_sequence_with_camera(dir, 0)
}

pub fn load_sequence_with_camera(dir: &Path, camera: usize) -> Result<KittiSequence> {
    if !dir.is_dir() {
        return Err(Error::MissingFile {
            what: "KITTI sequence directory".into(),
            path: dir.to_path_buf(),
        });
    }
    let times = load_timestamps(&dir.join("oxts").join("timestamps.txt"))?;
    let data = dir.join("oxts").join("data");
    if !data.is_dir() {
        return Err(Error::MissingFile {
            what: "OXTS data directory".into(),
            path: data,
        });
    }
    let records = (0..times.len())
        .map(|i| load_oxts_record(&data.join(format!("{i:010}.txt"))))
        .collect::<Result<Vec<_>>>()?;
    let calibration = load_calibration(dir, camera)?;
    let imu = records.iter().zip(&times).map(|(r, &t)| r.imu_sample(t)).collect();
    let ground_truth = oxts_poses(&records);
    let velocities = records.iter().map(OxtsRecord::velocity).collect();
    Ok(KittiSequence {
        times,
        imu,
        calibration,
        ground_truth,
        velocities,
        records,
    })
}

/// Feature tracks (`frame,track_id,u,v`).
pub fn load_tracks(path: &Path) -> Result<TrackSet> {
    TrackSet::load(path)
}
