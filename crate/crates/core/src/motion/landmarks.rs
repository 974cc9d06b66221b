use std::path::Path;

use serde::{Deserialize, Serialize};

use super::audio::{csv_error, parse_floats};
use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;
pub const LANDMARK_VALUES: usize = LANDMARK_COUNT * 3;

/// 0-based indices of the outer and inner lip contour in the 68-point layout.
pub const MOUTH_INDICES: std::ops::Range<usize> = 48..68;

/// One frame of 68 3D facial landmarks in scene units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    frame: usize,
    points: Vec<[f32; 3]>,
}

impl LandmarkSet {
    pub fn new(frame: usize, points: Vec<[f32; 3]>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::shape("landmark set", LANDMARK_COUNT, points.len()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Numeric(format!("landmark {i} of frame {frame} is not finite")));
        }
        Ok(LandmarkSet { frame, points })
    }

    /// From `x0, y0, z0, ..., x67, y67, z67`.
    pub fn from_flat(frame: usize, flat: &[f32]) -> Result<Self> {
        if flat.len() != LANDMARK_VALUES {
            return Err(Error::shape("flattened landmark set", LANDMARK_VALUES, flat.len()));
        }
        Self::new(frame, flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn with_frame(mut self, frame: usize) -> Self {
        self.frame = frame;
        self
    }

    pub fn points(&self) -> &[[f32; 3]] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [[f32; 3]] {
        &mut self.points
    }

    pub fn point(&self, i: usize) -> [f32; 3] {
        self.points[i]
    }

    pub fn flatten(&self) -> Vec<f32> {
        self.points.iter().flatten().copied().collect()
    }

    /// Coordinate-wise mean of several sets (frame index 0).
    pub fn mean(sets: &[LandmarkSet]) -> Result<LandmarkSet> {
        if sets.is_empty() {
            return Err(Error::Domain("mean of zero landmark sets".into()));
        }
        let mut acc = vec![[0f64; 3]; LANDMARK_COUNT];
        for s in sets {
            for (a, p) in acc.iter_mut().zip(&s.points) {
                for k in 0..3 {
                    a[k] += p[k] as f64;
                }
            }
        }
        let n = sets.len() as f64;
        LandmarkSet::new(0, acc.iter().map(|a| [(a[0] / n) as f32, (a[1] / n) as f32, (a[2] / n) as f32]).collect())
    }
}

/// Reads `x0,y0,z0,...,x67,y67,z67`, one row per frame.
pub fn read_landmarks_csv(path: &Path) -> Result<Vec<LandmarkSet>> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(&file, None, e))?;
    let headers = reader.headers().map_err(|e| csv_error(&file, None, e))?.clone();
    let expected = landmark_header();
    if headers.len() != expected.len() || headers.iter().zip(&expected).any(|(h, e)| h.trim() != e) {
        return Err(Error::dataset(&file, None, "header must be x0,y0,z0,...,x67,y67,z67"));
    }
    let mut sets = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&file, Some(i), e))?;
        let values = parse_floats(&record, &file, i)?;
        if values.len() != LANDMARK_VALUES {
            return Err(Error::dataset(&file, Some(i), format!("expected {LANDMARK_VALUES} values, found {}", values.len())));
        }
        sets.push(LandmarkSet::from_flat(i, &values)?);
    }
    if sets.is_empty() {
        return Err(Error::dataset(&file, None, "no rows"));
    }
    Ok(sets)
}

pub fn write_landmarks_csv(path: &Path, sets: &[LandmarkSet]) -> Result<()> {
    let file = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&file, None, e))?;
    w.write_record(landmark_header()).map_err(|e| csv_error(&file, None, e))?;
    for s in sets {
        w.write_record(s.flatten().iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(&file, Some(s.frame), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn landmark_header() -> Vec<String> {
    (0..LANDMARK_COUNT)
        .flat_map(|i| [format!("x{i}"), format!("y{i}"), format!("z{i}")])
        .collect()
}
