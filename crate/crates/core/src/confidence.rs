//! Feature confidence from the motion direction and the forward-motion ratio,
//! the block-diagonal confidence matrix, and the depth-versus-angle street
//! statistics.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::ConfidenceMatrix;

/// Camera speed below which the motion direction is considered undefined.
pub const MIN_SPEED: f64 = 1e-6;
pub const DEFAULT_FLOOR: f64 = 0.05;
pub const DEFAULT_CAP: f64 = 20.0;

/// How feature confidences enter the measurement noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    /// `C_f = I`: every feature shares `R`.
    Off,
    /// `C_f = blockdiag(c_m I_2)` with `c_m = tau * angle`.
    #[default]
    Literal,
    /// `C_f = blockdiag((c_max - c_m) I_2)`: features near the motion axis
    /// receive the larger noise.
    Inverted,
}

impl ConfidenceMode {
    pub const ALL: [ConfidenceMode; 3] = [Self::Off, Self::Literal, Self::Inverted];

    pub fn name(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::Literal => "literal",
            Self::Inverted => "inverted",
        }
    }
}

impl std::str::FromStr for ConfidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "literal" => Ok(Self::Literal),
            "inverted" => Ok(Self::Inverted),
            other => Err(Error::Config(format!(
                "unknown confidence mode '{other}' (expected off, literal or inverted)"
            ))),
        }
    }
}

impl std::fmt::Display for ConfidenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Angle in [0, pi] between the camera velocity and a feature's position
/// (or bearing) vector, both in the camera frame. `None` when the velocity is
/// below [`MIN_SPEED`] or the bearing is zero.
pub fn angle_confidence(camera_velocity: &Vector3<f64>, bearing: &Vector3<f64>) -> Option<f64> {
    let (nv, nf) = (camera_velocity.norm(), bearing.norm());
    if !(nv > MIN_SPEED) || nf == 0.0 {
        return None;
    }
    let c = (camera_velocity.dot(bearing) / (nv * nf)).clamp(-1.0, 1.0);
    Some(c.acos())
}

/// `tau = |v| / (|g_m| + |v|)`, zero when both norms vanish.
pub fn forward_motion_ratio(v_world: &Vector3<f64>, gyro: &Vector3<f64>) -> f64 {
    let v = v_world.norm();
    let g = gyro.norm();
    if v + g == 0.0 {
        0.0
    } else {
        v / (g + v)
    }
}

/// Per-feature confidences of one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceVector {
    /// angle to the motion axis, rad
    pub angles: Vec<f64>,
    pub tau: f64,
    /// `tau * angle`, rad
    pub combined: Vec<f64>,
}

impl ConfidenceVector {
    pub fn len(&self) -> usize {
        self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.combined.is_empty() {
            return 0.0;
        }
        self.combined.iter().sum::<f64>() / self.combined.len() as f64
    }
}

/// `c_m = tau * c_t,m`.
pub fn combine(angles: &[f64], tau: f64) -> Result<ConfidenceVector> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("tau {tau} outside [0, 1]")));
    }
    Ok(ConfidenceVector {
        angles: angles.to_vec(),
        tau,
        combined: angles.iter().map(|a| tau * a).collect(),
    })
}

/// Clamping applied before the confidences scale `R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceLimits {
    pub floor: f64,
    pub cap: f64,
    /// `c_max` of the inverted mode, rad
    pub inverted_max: f64,
}

impl Default for ConfidenceLimits {
    fn default() -> Self {
        Self {
            floor: DEFAULT_FLOOR,
            cap: DEFAULT_CAP,
            inverted_max: FRAC_PI_2,
        }
    }
}

/// `blockdiag(clamp(c_m, floor, cap) I_2)`.
pub fn build_confidence_matrix(c: &ConfidenceVector, floor: f64, cap: f64) -> Result<ConfidenceMatrix> {
    let scales: Vec<f64> = c.combined.iter().map(|v| v.clamp(floor, cap)).collect();
    ConfidenceMatrix::from_blocks(&scales, 2)
}

/// Per-feature scale of `R` for a mode. `None` angles (motion direction
/// undefined) give the neutral scale 1.
pub fn mode_scales(
    mode: ConfidenceMode,
    c: &ConfidenceVector,
    limits: &ConfidenceLimits,
) -> Vec<f64> {
    match mode {
        ConfidenceMode::Off => vec![1.0; c.len()],
        ConfidenceMode::Literal => c
            .combined
            .iter()
            .map(|v| v.clamp(limits.floor, limits.cap))
            .collect(),
        ConfidenceMode::Inverted => c
            .combined
            .iter()
            .map(|v| (limits.inverted_max - v).clamp(limits.floor, limits.cap))
            .collect(),
    }
}

/// Street statistics: joint histogram of (angle to motion axis, depth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreetStats {
    pub angle_edges: Vec<f64>,
    pub depth_edges: Vec<f64>,
    /// `counts[angle_bin][depth_bin]`
    pub counts: Vec<Vec<u64>>,
    pub samples: usize,
    /// Spearman rank correlation; `None` below [`MIN_CORRELATION_SAMPLES`].
    pub spearman: Option<f64>,
}

pub const MIN_CORRELATION_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreetSample {
    /// rad
    pub angle: f64,
    /// m
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub angle_bins: usize,
    pub angle_max: f64,
    pub depth_bins: usize,
    pub depth_max: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            angle_bins: 18,
            angle_max: FRAC_PI_2,
            depth_bins: 16,
            depth_max: 80.0,
        }
    }
}

/// Angle between a camera-frame feature position and the camera-frame motion
/// axis, with the feature range as depth.
pub fn street_sample(p_cam: &Vector3<f64>, motion_axis_cam: &Vector3<f64>) -> Option<StreetSample> {
    angle_confidence(motion_axis_cam, p_cam).map(|angle| StreetSample {
        angle,
        depth: p_cam.norm(),
    })
}

fn bin(v: f64, max: f64, n: usize) -> usize {
    if !(v > 0.0) {
        return 0;
    }
    ((v / max * n as f64) as usize).min(n - 1)
}

pub fn street_statistics(samples: &[StreetSample], spec: &HistogramSpec) -> StreetStats {
    let mut counts = vec![vec![0u64; spec.depth_bins]; spec.angle_bins];
    for s in samples {
        counts[bin(s.angle, spec.angle_max, spec.angle_bins)][bin(s.depth, spec.depth_max, spec.depth_bins)] += 1;
    }
    let edges = |max: f64, n: usize| (0..=n).map(|i| max * i as f64 / n as f64).collect();
    let spearman = (samples.len() >= MIN_CORRELATION_SAMPLES).then(|| {
        let a: Vec<f64> = samples.iter().map(|s| s.angle).collect();
        let d: Vec<f64> = samples.iter().map(|s| s.depth).collect();
        spearman(&a, &d)
    });
    StreetStats {
        angle_edges: edges(spec.angle_max, spec.angle_bins),
        depth_edges: edges(spec.depth_max, spec.depth_bins),
        counts,
        samples: samples.len(),
        spearman,
    }
}

impl StreetStats {
    /// `angle_lo,angle_hi,depth_lo,depth_hi,count` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["angle_lo", "angle_hi", "depth_lo", "depth_hi", "count"])?;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                w.write_record(&[
                    self.angle_edges[i].to_string(),
                    self.angle_edges[i + 1].to_string(),
                    self.depth_edges[j].to_string(),
                    self.depth_edges[j + 1].to_string(),
                    c.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Average ranks (1-based), ties share their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; 0 when either variable is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
