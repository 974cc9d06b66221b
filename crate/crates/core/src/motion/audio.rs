use std::path::Path;

use crate::error::{Error, Result};

/// Precomputed acoustic features for one video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioFeatureFrame {
    pub frame: usize,
    pub values: Vec<f32>,
}

impl AudioFeatureFrame {
    pub fn new(frame: usize, values: Vec<f32>) -> Self {
        AudioFeatureFrame { frame, values }
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }
}

/// Shared feature width of a nonempty, finite, rectangular sequence.
pub fn sequence_width(frames: &[AudioFeatureFrame]) -> Result<usize> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Domain("empty audio feature sequence".into()))?;
    let width = first.width();
    for f in frames {
        if f.width() != width {
            return Err(Error::shape(format!("audio features of frame {}", f.frame), width, f.width()));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("audio features of frame {} are not finite", f.frame)));
        }
    }
    Ok(width)
}

/// Triangular moving average: frame `i + k` gets weight `h + 1 - |k|` for
/// `|k| <= h`. Near the ends the missing taps are dropped and the remaining
/// weights renormalized.
pub fn temporal_filter(frames: &[AudioFeatureFrame], half_width: usize) -> Result<Vec<AudioFeatureFrame>> {
    let width = sequence_width(frames)?;
    let n = frames.len();
    let h = half_width as isize;
    Ok((0..n)
        .map(|i| {
            let mut acc = vec![0f64; width];
            let mut total = 0f64;
            for k in -h..=h {
                let j = i as isize + k;
                if j < 0 || j >= n as isize {
                    continue;
                }
                let w = (h + 1 - k.abs()) as f64;
                total += w;
                for (a, &v) in acc.iter_mut().zip(&frames[j as usize].values) {
                    *a += w * v as f64;
                }
            }
            AudioFeatureFrame::new(frames[i].frame, acc.iter().map(|a| (a / total) as f32).collect())
        })
        .collect())
}

/// Reads `f0..f{D-1}`, one row per frame; frame indices follow row order.
pub fn read_audio_csv(path: &Path) -> Result<Vec<AudioFeatureFrame>> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(&file, None, e))?;
    let headers = reader.headers().map_err(|e| csv_error(&file, None, e))?.clone();
    for (j, h) in headers.iter().enumerate() {
        if h.trim() != format!("f{j}") {
            return Err(Error::dataset(&file, None, format!("column {j} must be named f{j}, found {h:?}")));
        }
    }
    if headers.is_empty() {
        return Err(Error::dataset(&file, None, "no feature columns"));
    }
    let mut frames = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&file, Some(i), e))?;
        let values = parse_floats(&record, &file, i)?;
        if values.len() != headers.len() {
            return Err(Error::dataset(&file, Some(i), format!("expected {} values, found {}", headers.len(), values.len())));
        }
        frames.push(AudioFeatureFrame::new(i, values));
    }
    if frames.is_empty() {
        return Err(Error::dataset(&file, None, "no rows"));
    }
    Ok(frames)
}

pub fn write_audio_csv(path: &Path, frames: &[AudioFeatureFrame]) -> Result<()> {
    let width = sequence_width(frames)?;
    let file = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&file, None, e))?;
    w.write_record((0..width).map(|j| format!("f{j}")))
        .map_err(|e| csv_error(&file, None, e))?;
    for f in frames {
        w.write_record(f.values.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(&file, Some(f.frame), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(file: &str, frame: Option<usize>, e: csv::Error) -> Error {
    Error::dataset(file, frame, format!("malformed csv: {e}"))
}

pub(crate) fn parse_floats(record: &csv::StringRecord, file: &str, frame: usize) -> Result<Vec<f32>> {
    record
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let v: f32 = s
                .trim()
                .parse()
                .map_err(|_| Error::dataset(file, Some(frame), format!("column {j}: {s:?} is not a number")))?;
            if !v.is_finite() {
                return Err(Error::dataset(file, Some(frame), format!("column {j} is not finite")));
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f32]) -> Vec<AudioFeatureFrame> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| AudioFeatureFrame::new(i, vec![v]))
            .collect()
    }

    #[test]
    fn zero_half_width_is_identity() {
        let s = seq(&[1.0, -2.0, 3.5]);
        assert_eq!(temporal_filter(&s, 0).unwrap(), s);
    }

    #[test]
    fn constant_sequence_is_fixed() {
        let s = seq(&[0.7; 6]);
        for f in temporal_filter(&s, 3).unwrap() {
            assert!((f.values[0] - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn impulse_response_is_the_triangular_kernel() {
        let mut v = [0.0f32; 9];
        v[4] = 1.0;
        let out = temporal_filter(&seq(&v), 2).unwrap();
        // weights 1,2,3,2,1 over a total of 9
        let want = [0.0, 0.0, 1.0 / 9.0, 2.0 / 9.0, 3.0 / 9.0, 2.0 / 9.0, 1.0 / 9.0, 0.0, 0.0];
        for (o, w) in out.iter().zip(want) {
            assert!((o.values[0] - w).abs() < 1e-7);
        }
    }

    #[test]
    fn edge_weights_are_renormalized() {
        // frame 0 keeps taps 0, 1, 2 with weights 3, 2, 1
        let out = temporal_filter(&seq(&[1.0, 0.0, 0.0]), 2).unwrap();
        assert!((out[0].values[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn empty_and_ragged_sequences_are_rejected() {
        assert!(matches!(temporal_filter(&[], 1), Err(Error::Domain(_))));
        let ragged = vec![AudioFeatureFrame::new(0, vec![1.0]), AudioFeatureFrame::new(1, vec![1.0, 2.0])];
        assert!(matches!(temporal_filter(&ragged, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let frames = vec![
            AudioFeatureFrame::new(0, vec![0.25, -1.5]),
            AudioFeatureFrame::new(1, vec![3.0, 1e-3]),
        ];
        write_audio_csv(&p, &frames).unwrap();
        assert_eq!(read_audio_csv(&p).unwrap(), frames);

        std::fs::write(&p, "f0,g1\n1,2\n").unwrap();
        assert!(read_audio_csv(&p).unwrap_err().to_string().contains("f1"));
        std::fs::write(&p, "f0,f1\n1,2\n1,x\n").unwrap();
        let err = read_audio_csv(&p).unwrap_err();
        assert!(matches!(err, Error::Dataset { frame: Some(1), .. }), "{err}");
    }
}
