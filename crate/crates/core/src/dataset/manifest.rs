use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blink::read_au_csv;
use crate::error::{Error, Result};
use crate::motion::{read_audio_csv, read_landmarks_csv, AudioFeatureFrame, LandmarkSet};
use crate::render::{Camera, Image};

/// `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub frame_count: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub background: [f32; 3],
    pub scene_bounds: SceneBounds,
    pub frames_dir: String,
    pub cameras: String,
    pub landmarks: String,
    pub audio_features: String,
    pub au: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// One entry of `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major camera-to-world rotation.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera) -> Self {
        let r = &cam.rotation;
        CameraRecord {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            rotation: [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]],
            translation: cam.translation,
        }
    }

    pub fn to_camera(&self, width: usize, height: usize) -> Result<Camera> {
        let r = &self.rotation;
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            self.translation,
            width,
            height,
        )
    }
}

/// Per-axis affine map `x' = scale * x + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTransform {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl SceneTransform {
    pub const IDENTITY: SceneTransform = SceneTransform {
        scale: [1.0; 3],
        offset: [0.0; 3],
    };

    /// Maps `bounds` onto `[0.05, 0.95]^3`.
    pub fn fit(bounds: &SceneBounds) -> Result<Self> {
        let mut scale = [0.0; 3];
        let mut offset = [0.0; 3];
        for k in 0..3 {
            let extent = bounds.max[k] - bounds.min[k];
            if !(extent > 0.0) || !extent.is_finite() {
                return Err(Error::dataset(
                    "manifest.json",
                    None,
                    format!("scene bounds have zero extent on axis {k}"),
                ));
            }
            scale[k] = 0.9 / extent;
            offset[k] = 0.05 - bounds.min[k] * scale[k];
        }
        Ok(SceneTransform { scale, offset })
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| self.scale[k] * p[k] + self.offset[k])
    }

    pub fn inverse(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| (p[k] - self.offset[k]) / self.scale[k])
    }

    /// Composition: `self` after `first`.
    pub fn after(&self, first: &SceneTransform) -> SceneTransform {
        SceneTransform {
            scale: [0, 1, 2].map(|k| self.scale[k] * first.scale[k]),
            offset: [0, 1, 2].map(|k| self.scale[k] * first.offset[k] + self.offset[k]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub image: PathBuf,
    pub camera: Camera,
    pub landmarks: LandmarkSet,
    pub audio: AudioFeatureFrame,
    pub au: f32,
}

/// A fully validated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub background: [f32; 3],
    pub bounds: SceneBounds,
    pub frames: Vec<FrameRecord>,
    /// World-to-normalized map already applied to cameras and landmarks.
    pub transform: SceneTransform,
}

impl DatasetManifest {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn load_image(&self, i: usize) -> Result<Image> {
        Image::load_png(&self.frames[i].image)
    }

    pub fn load_images(&self) -> Result<Vec<Image>> {
        (0..self.frame_count()).map(|i| self.load_image(i)).collect()
    }

    pub fn audio_frames(&self) -> Vec<AudioFeatureFrame> {
        self.frames.iter().map(|f| f.audio.clone()).collect()
    }

    pub fn landmark_sets(&self) -> Vec<LandmarkSet> {
        self.frames.iter().map(|f| f.landmarks.clone()).collect()
    }

    pub fn au_values(&self) -> Vec<f32> {
        self.frames.iter().map(|f| f.au).collect()
    }

    pub fn is_normalized(&self) -> bool {
        self.transform != SceneTransform::IDENTITY
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::dataset(
            path.display().to_string(),
            None,
            format!("invalid json at line {}: {e}", e.line()),
        )
    })
}

pub fn frame_file_name(i: usize) -> String {
    format!("{i:05}.png")
}

/// Loads and validates a dataset directory. Nothing is returned unless every
/// file passes every rule.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    let manifest_path = root.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::dataset(manifest_path.display().to_string(), None, "file missing"));
    }
    let m: ManifestFile = read_json(&manifest_path)?;
    let mname = "manifest.json";
    if m.frame_count == 0 {
        return Err(Error::dataset(mname, None, "frame_count must be positive"));
    }
    if m.width == 0 || m.height == 0 {
        return Err(Error::dataset(mname, None, "image size must be positive"));
    }
    if !(m.fps > 0.0) {
        return Err(Error::dataset(mname, None, "fps must be positive"));
    }
    if m.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::dataset(mname, None, "background channels must lie in [0, 1]"));
    }
    let transform = SceneTransform::fit(&m.scene_bounds)?;

    let cam_path = root.join(&m.cameras);
    let cam_records: Vec<CameraRecord> = read_json(&cam_path)?;
    let cam_name = m.cameras.as_str();
    let landmarks = read_landmarks_csv(&root.join(&m.landmarks))?;
    let audio = read_audio_csv(&root.join(&m.audio_features))?;
    let au = read_au_csv(&root.join(&m.au))?;

    let counts = [
        (cam_name, cam_records.len()),
        (m.landmarks.as_str(), landmarks.len()),
        (m.audio_features.as_str(), audio.len()),
        (m.au.as_str(), au.len()),
    ];
    for (file, n) in counts {
        if n != m.frame_count {
            return Err(Error::dataset(
                file,
                None,
                format!("{n} frames, but {mname} declares frame_count = {}", m.frame_count),
            ));
        }
    }

    let frames_dir = root.join(&m.frames_dir);
    let mut frames = Vec::with_capacity(m.frame_count);
    for (i, ((rec, lm), (a, &au))) in cam_records
        .iter()
        .zip(landmarks)
        .zip(audio.into_iter().zip(&au))
        .enumerate()
    {
        let camera = rec
            .to_camera(m.width, m.height)
            .map_err(|e| Error::dataset(cam_name, Some(i), e.to_string()))?;
        for (j, p) in lm.points().iter().enumerate() {
            let q = transform.apply([p[0] as f64, p[1] as f64, p[2] as f64]);
            if q.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::dataset(
                    m.landmarks.as_str(),
                    Some(i),
                    format!("landmark {j} lies outside the scene bounds after normalization"),
                ));
            }
        }
        let image = frames_dir.join(frame_file_name(i));
        check_png(&image, m.width, m.height, i)?;
        frames.push(FrameRecord {
            index: i,
            image,
            camera,
            landmarks: lm,
            audio: a,
            au,
        });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        fps: m.fps,
        width: m.width,
        height: m.height,
        background: m.background,
        bounds: m.scene_bounds,
        frames,
        transform: SceneTransform::IDENTITY,
    })
}

fn check_png(path: &Path, width: usize, height: usize, frame: usize) -> Result<()> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|_| Error::dataset(&name, Some(frame), "image file missing"))?;
    let info = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| Error::dataset(&name, Some(frame), format!("png decode: {e}")))?
        .info()
        .clone();
    if info.width as usize != width || info.height as usize != height {
        return Err(Error::dataset(
            &name,
            Some(frame),
            format!("image is {}x{}, manifest says {width}x{height}", info.width, info.height),
        ));
    }
    Ok(())
}

/// Maps the scene bounds to `[0.05, 0.95]^3`, moving camera centers and
/// landmarks accordingly. Per-axis scales become each camera's
/// `axis_scale`, so rays keep hitting the same points. Applying it twice is
/// a no-op after the first time (the bounds are updated too).
pub fn normalize_scene(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    let t = SceneTransform::fit(&manifest.bounds)?;
    let mut out = manifest.clone();
    for f in &mut out.frames {
        f.camera.translation = t.apply(f.camera.translation);
        for k in 0..3 {
            f.camera.axis_scale[k] *= t.scale[k];
        }
        for p in f.landmarks.points_mut() {
            let q = t.apply([p[0] as f64, p[1] as f64, p[2] as f64]);
            *p = q.map(|c| c as f32);
        }
    }
    out.bounds = SceneBounds {
        min: t.apply(manifest.bounds.min),
        max: t.apply(manifest.bounds.max),
    };
    out.transform = t.after(&manifest.transform);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_bounds_map_is_identity_on_unit_margin_box() {
        let b = SceneBounds {
            min: [0.05; 3],
            max: [0.95; 3],
        };
        let t = SceneTransform::fit(&b).unwrap();
        for k in 0..3 {
            assert!((t.scale[k] - 1.0).abs() < 1e-12 && t.offset[k].abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_and_round_trip() {
        let b = SceneBounds {
            min: [-2.0, 0.0, 1.0],
            max: [4.0, 1.0, 9.0],
        };
        let t = SceneTransform::fit(&b).unwrap();
        let mid = t.apply([1.0, 0.5, 5.0]);
        for c in mid {
            assert!((c - 0.5).abs() < 1e-12);
        }
        let p = [0.3, -7.0, 2.5];
        let back = t.inverse(t.apply(p));
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        let b = SceneBounds {
            min: [0.0; 3],
            max: [1.0, 0.0, 1.0],
        };
        assert!(matches!(SceneTransform::fit(&b), Err(Error::Dataset { .. })));
    }

    #[test]
    fn camera_record_round_trip() {
        let cam = Camera::look_at([1.0, 2.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 40.0, 32, 24).unwrap();
        let back = CameraRecord::from_camera(&cam).to_camera(32, 24).unwrap();
        assert_eq!(back, cam);
    }
}
