//! Feature tracks: per-id pixel observations and the three-view triples the
//! measurement model consumes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub frame: usize,
    pub track_id: u64,
    pub u: f64,
    pub v: f64,
}

/// One feature seen in the current frame and the two before it.
///
/// `f1` is the newest observation (frame k), `f3` the oldest (frame k-2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureTriple {
    pub track_id: u64,
    pub f1: Vector2<f64>,
    pub f2: Vector2<f64>,
    pub f3: Vector2<f64>,
    /// Number of frames the track has been observed up to frame k.
    pub age: usize,
}

/// Observations grouped by track id, each track ordered by frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackSet {
    tracks: BTreeMap<u64, Vec<(usize, Vector2<f64>)>>,
    by_frame: BTreeMap<usize, Vec<u64>>,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the set from unordered rows. Duplicate `(frame, track_id)` pairs
    /// are rejected.
    pub fn from_rows(rows: impl IntoIterator<Item = TrackRow>) -> Result<Self> {
        let mut set = Self::new();
        for r in rows {
            set.insert(r)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, row: TrackRow) -> Result<()> {
        if !(row.u.is_finite() && row.v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite pixel for track {} at frame {}",
                row.track_id, row.frame
            )));
        }
        let obs = self.tracks.entry(row.track_id).or_default();
        match obs.binary_search_by_key(&row.frame, |o| o.0) {
            Ok(_) => {
                return Err(Error::InvalidInput(format!(
                    "duplicate observation of track {} at frame {}",
                    row.track_id, row.frame
                )))
            }
            Err(i) => obs.insert(i, (row.frame, Vector2::new(row.u, row.v))),
        }
        let ids = self.by_frame.entry(row.frame).or_default();
        if let Err(i) = ids.binary_search(&row.track_id) {
            ids.insert(i, row.track_id);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn observation_count(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    pub fn track(&self, id: u64) -> Option<&[(usize, Vector2<f64>)]> {
        self.tracks.get(&id).map(Vec::as_slice)
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.tracks.keys().copied()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.by_frame.keys().next_back().copied()
    }

    fn pixel_at(&self, id: u64, frame: usize) -> Option<(usize, Vector2<f64>)> {
        let obs = self.tracks.get(&id)?;
        let i = obs.binary_search_by_key(&frame, |o| o.0).ok()?;
        Some((i, obs[i].1))
    }

    /// `(track_id, pixel)` for every track observed at `frame`, by id.
    pub fn observations_at(&self, frame: usize) -> Vec<(u64, Vector2<f64>)> {
        self.by_frame
            .get(&frame)
            .map(|ids| {
                ids.iter()
                    .filter_map(|&id| self.pixel_at(id, frame).map(|(_, p)| (id, p)))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Triples for tracks observed in frames `frame`, `frame - 1` and
    /// `frame - 2`, ordered by id.
    pub fn triples_at(&self, frame: usize) -> Vec<FeatureTriple> {
        if frame < 2 {
            return Vec::new();
        }
        let Some(ids) = self.by_frame.get(&frame) else {
            return Vec::new();
        };
        ids.iter()
            .filter_map(|&id| {
                let (i, f1) = self.pixel_at(id, frame)?;
                let (_, f2) = self.pixel_at(id, frame - 1)?;
                let (_, f3) = self.pixel_at(id, frame - 2)?;
                Some(FeatureTriple {
                    track_id: id,
                    f1,
                    f2,
                    f3,
                    age: i + 1,
                })
            })
            .collect()
    }

    /// Rows ordered by frame, then track id.
    pub fn rows(&self) -> Vec<TrackRow> {
        let mut out = Vec::with_capacity(self.observation_count());
        for (&frame, ids) in &self.by_frame {
            for &id in ids {
                if let Some((_, p)) = self.pixel_at(id, frame) {
                    out.push(TrackRow {
                        frame,
                        track_id: id,
                        u: p.x,
                        v: p.y,
                    });
                }
            }
        }
        out
    }

    /// CSV with header `frame,track_id,u,v`.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() {
            return Ok(Self::new());
        }
        let expected = ["frame", "track_id", "u", "v"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                reason: format!("expected header frame,track_id,u,v, found {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut set = Self::new();
        for (i, rec) in rdr.deserialize::<TrackRow>().enumerate() {
            let line = i + 2;
            let row = rec.map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                reason: e.to_string(),
            })?;
            set.insert(row).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                reason: e.to_string(),
            })?;
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|_| Error::MissingFile {
            what: "feature tracks".into(),
            path: path.to_path_buf(),
        })?;
        Self::read_csv(file, path)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in self.rows() {
            w.serialize(r)?;
        }
        if self.is_empty() {
            w.write_record(["frame", "track_id", "u", "v"])?;
        }
        w.flush()?;
        Ok(())
    }
}
