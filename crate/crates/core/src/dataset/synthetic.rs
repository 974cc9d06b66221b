//! A deforming sphere rendered by analytic ray tracing. Its mouth opening
//! follows a smooth driving scalar that the audio features encode, and an
//! eye band darkens with the blink track. Shares no code with the volume
//! renderer.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{frame_file_name, CameraRecord, ManifestFile, SceneBounds};
use crate::blink::write_au_csv;
use crate::error::{Error, Result};
use crate::motion::{write_audio_csv, write_landmarks_csv, AudioFeatureFrame, LandmarkSet};
use crate::render::{dot, normalize, sub, Camera, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub radius: f64,
    pub center: [f64; 3],
    /// Slope of the mouth half-height in the driving scalar.
    pub mouth_amplitude: f64,
    /// Depth of blink dips in eye openness; 0 keeps the eyes open.
    pub blink_depth: f64,
    pub audio_width: usize,
    pub fps: f64,
    pub background: [f32; 3],
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 7,
            frame_count: 60,
            width: 64,
            height: 64,
            focal: 110.0,
            radius: 1.0,
            center: [0.0; 3],
            mouth_amplitude: 0.12,
            blink_depth: 1.0,
            audio_width: 29,
            fps: 25.0,
            background: [0.25, 0.3, 0.4],
        }
    }
}

const MOUTH_Y: f64 = -0.45;
const MOUTH_HALF_WIDTH: f64 = 0.3;
const MOUTH_REST: f64 = 0.03;
const EYE_CENTERS: [[f64; 2]; 2] = [[-0.35, 0.3], [0.35, 0.3]];
const EYE_HALF_WIDTH: f64 = 0.15;
const EYE_HALF_HEIGHT: f64 = 0.08;
/// Vertical half-gap of the eye landmarks at full openness.
const EYE_LID_GAP: f64 = 0.0625;
const CAMERA_DISTANCE: f64 = 4.0;
const BOUNDS: f64 = 1.25;

/// Per-frame driving scalar (in `[0, 1]`) and eye openness.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSignals {
    pub drive: Vec<f64>,
    pub openness: Vec<f64>,
}

pub fn synthetic_signals(spec: &SyntheticSceneSpec) -> SyntheticSignals {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: [f64; 3] = [rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)];
    let drive = (0..spec.frame_count)
        .map(|f| {
            let t = f as f64;
            0.5 + 0.3 * (std::f64::consts::TAU * t / 17.0 + phases[0]).sin()
                + 0.15 * (std::f64::consts::TAU * t / 7.3 + phases[1]).sin()
                + 0.05 * (std::f64::consts::TAU * t / 3.1 + phases[2]).sin()
        })
        .collect();
    // triangular dips of half-width 3 frames, one every 10..16 frames
    let mut centers = Vec::new();
    let mut c = rng.gen_range(4..10) as isize;
    while (c as usize) < spec.frame_count {
        centers.push(c);
        c += rng.gen_range(10..17);
    }
    let openness = (0..spec.frame_count as isize)
        .map(|f| {
            let dip = centers
                .iter()
                .map(|&c| (1.0 - (f - c).abs() as f64 / 3.0).max(0.0))
                .fold(0.0, f64::max);
            1.0 - spec.blink_depth * dip
        })
        .collect();
    SyntheticSignals { drive, openness }
}

fn mouth_half_height(spec: &SyntheticSceneSpec, s: f64) -> f64 {
    MOUTH_REST + spec.mouth_amplitude * s
}

/// 68 landmarks on the front of the sphere in world units. Depth uses the
/// rest pose, so only `x`/`y` move with the signals.
pub fn synthetic_landmarks(spec: &SyntheticSceneSpec, frame: usize, drive: f64, openness: f64) -> LandmarkSet {
    let r = spec.radius;
    let h = mouth_half_height(spec, drive);
    let (ym, mw) = (MOUTH_Y, MOUTH_HALF_WIDTH);
    let mut xy: Vec<[f64; 3]> = Vec::with_capacity(68);
    // jaw 0..=16: (x, y, rest y)
    for i in 0..17 {
        let a = std::f64::consts::PI * (1.1 + 0.8 * i as f64 / 16.0);
        xy.push([0.75 * a.cos(), 0.1 + 0.75 * a.sin(), 0.1 + 0.75 * a.sin()]);
    }
    // brows 17..=26
    for i in 0..10 {
        let x = if i < 5 { -0.55 + 0.1 * i as f64 } else { 0.15 + 0.1 * (i - 5) as f64 };
        xy.push([x, 0.5, 0.5]);
    }
    // nose bridge 27..=30 and base 31..=35
    for i in 0..4 {
        let y = 0.25 - 0.1 * i as f64;
        xy.push([0.0, y, y]);
    }
    for i in 0..5 {
        xy.push([-0.1 + 0.05 * i as f64, -0.15, -0.15]);
    }
    // eyes 36..=47 in the conventional order: outer corner, two upper, inner
    // corner, two lower (mirrored for the second eye)
    let gap = EYE_LID_GAP * openness;
    for (e, c) in EYE_CENTERS.iter().enumerate() {
        let s = if e == 0 { 1.0 } else { -1.0 };
        let (cx, cy) = (c[0], c[1]);
        let pts = [
            [cx - s * 0.15, cy, cy],
            [cx - s * 0.05, cy + gap, cy],
            [cx + s * 0.05, cy + gap, cy],
            [cx + s * 0.15, cy, cy],
            [cx + s * 0.05, cy - gap, cy],
            [cx - s * 0.05, cy - gap, cy],
        ];
        xy.extend(pts);
    }
    // outer lip 48..=59: left corner, upper 49..=53, right corner, lower 55..=59
    xy.push([-mw, ym, ym]);
    for i in 0..5 {
        xy.push([-0.2 + 0.1 * i as f64, ym + h, ym]);
    }
    xy.push([mw, ym, ym]);
    for i in 0..5 {
        xy.push([0.2 - 0.1 * i as f64, ym - h, ym]);
    }
    // inner lip 60..=67
    xy.push([-0.25, ym, ym]);
    for i in 0..3 {
        xy.push([-0.1 + 0.1 * i as f64, ym + 0.7 * h, ym]);
    }
    xy.push([0.25, ym, ym]);
    for i in 0..3 {
        xy.push([0.1 - 0.1 * i as f64, ym - 0.7 * h, ym]);
    }
    let pts = xy
        .iter()
        .map(|&[x, y, rest_y]| {
            let z = (r * r - x * x - rest_y * rest_y).max(0.0).sqrt();
            [
                (spec.center[0] + x) as f32,
                (spec.center[1] + y) as f32,
                (spec.center[2] + z) as f32,
            ]
        })
        .collect();
    LandmarkSet::new(frame, pts).expect("68 finite points")
}

/// Nearest positive root of `|o + t d - c|^2 = r^2`.
fn hit_sphere(o: [f64; 3], d: [f64; 3], c: [f64; 3], r: f64) -> Option<f64> {
    let oc = sub(o, c);
    let b = dot(oc, d);
    let disc = b * b - (dot(oc, oc) - r * r);
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [-b - s, -b + s].into_iter().find(|&t| t > 1e-9)
}

fn shade(n: [f64; 3], albedo: [f64; 3]) -> [f64; 3] {
    let l = normalize([0.3, 0.4, 1.0]);
    let k = 0.35 + 0.65 * dot(n, l).max(0.0);
    albedo.map(|a| a * k)
}

fn skin(p: [f64; 3]) -> [f64; 3] {
    let t = 0.9 + 0.1 * (3.0 * p[0]).sin() * (3.0 * p[1]).cos();
    [0.85 * t, 0.62 * t, 0.5 * t]
}

fn trace(spec: &SyntheticSceneSpec, o: [f64; 3], d: [f64; 3], drive: f64, openness: f64) -> [f64; 3] {
    let c = spec.center;
    let r = spec.radius;
    let h = mouth_half_height(spec, drive);
    if let Some(t) = hit_sphere(o, d, c, r) {
        let p = sub([o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]], c);
        let n = [p[0] / r, p[1] / r, p[2] / r];
        let in_mouth = p[2] > 0.0 && p[0].abs() < MOUTH_HALF_WIDTH * r && (p[1] - MOUTH_Y * r).abs() < h * r;
        if !in_mouth {
            for e in EYE_CENTERS {
                let u = (p[0] - e[0] * r) / (EYE_HALF_WIDTH * r);
                let v = (p[1] - e[1] * r) / (EYE_HALF_HEIGHT * r);
                if p[2] > 0.0 && u * u + v * v < 1.0 {
                    let lid = [0.7, 0.5, 0.42];
                    let iris = [0.08, 0.06, 0.1];
                    let m = openness;
                    return shade(n, [0, 1, 2].map(|k| lid[k] * (1.0 - m) + iris[k] * m));
                }
            }
            return shade(n, skin(p));
        }
        // the opening reveals a recessed inner sphere
        if let Some(t2) = hit_sphere(o, d, c, 0.8 * r) {
            let q = sub([o[0] + t2 * d[0], o[1] + t2 * d[1], o[2] + t2 * d[2]], c);
            let n2 = [q[0] / (0.8 * r), q[1] / (0.8 * r), q[2] / (0.8 * r)];
            return shade(n2, [0.45, 0.08, 0.1]);
        }
        return [0.05, 0.0, 0.0];
    }
    spec.background.map(|b| b as f64)
}

/// The fixed camera: on the `+z` axis looking at the sphere center.
pub fn synthetic_camera(spec: &SyntheticSceneSpec) -> Result<Camera> {
    let eye = [spec.center[0], spec.center[1], spec.center[2] + CAMERA_DISTANCE * spec.radius];
    Camera::look_at(eye, spec.center, [0.0, 1.0, 0.0], spec.focal, spec.width, spec.height)
}

fn render_frame(spec: &SyntheticSceneSpec, cam: &Camera, drive: f64, openness: f64) -> Image {
    let mut img = Image::new(spec.width, spec.height);
    let r = &cam.rotation;
    // 2x2 supersampling
    let offsets = [0.25, 0.75];
    for py in 0..spec.height {
        for px in 0..spec.width {
            let mut acc = [0.0; 3];
            for oy in offsets {
                for ox in offsets {
                    let local = [
                        (px as f64 + ox - cam.cx) / cam.fx,
                        -(py as f64 + oy - cam.cy) / cam.fy,
                        -1.0,
                    ];
                    let d = normalize([dot(r[0], local), dot(r[1], local), dot(r[2], local)]);
                    let c = trace(spec, cam.translation, d, drive, openness);
                    for k in 0..3 {
                        acc[k] += c[k] / 4.0;
                    }
                }
            }
            img.set_pixel(px, py, acc.map(|v| v as f32));
        }
    }
    img
}

/// Writes `manifest.json`, `cameras.json`, `frames/`, `landmarks.csv`,
/// `audio_features.csv` and `au.csv` under `out`.
pub fn generate_synthetic(spec: &SyntheticSceneSpec, out: &Path) -> Result<SyntheticSignals> {
    if spec.frame_count == 0 || spec.width == 0 || spec.height == 0 || spec.audio_width == 0 {
        return Err(Error::Config("synthetic scene needs positive frame count, size and audio width".into()));
    }
    if !(spec.radius > 0.0 && spec.focal > 0.0) || !(0.0..=1.0).contains(&spec.blink_depth) {
        return Err(Error::Config("synthetic scene needs positive radius/focal and blink depth in [0, 1]".into()));
    }
    let frames_dir = out.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let signals = synthetic_signals(spec);
    let cam = synthetic_camera(spec)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let weights: Vec<f64> = (0..spec.audio_width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let phases: Vec<f64> = (0..spec.audio_width).map(|_| rng.gen_range(0.0..6.3)).collect();

    let mut landmarks = Vec::new();
    let mut audio = Vec::new();
    let mut au = Vec::new();
    for f in 0..spec.frame_count {
        let (s, o) = (signals.drive[f], signals.openness[f]);
        render_frame(spec, &cam, s, o).save_png(&frames_dir.join(frame_file_name(f)))?;
        landmarks.push(synthetic_landmarks(spec, f, s, o));
        let values = (0..spec.audio_width)
            .map(|j| (weights[j] * s + 0.05 * (0.9 * f as f64 * (j + 1) as f64 + phases[j]).sin()) as f32)
            .collect();
        audio.push(AudioFeatureFrame::new(f, values));
        au.push((5.0 * (1.0 - o)) as f32);
    }
    write_landmarks_csv(&out.join("landmarks.csv"), &landmarks)?;
    write_audio_csv(&out.join("audio_features.csv"), &audio)?;
    write_au_csv(&out.join("au.csv"), &au)?;

    let cameras = vec![CameraRecord::from_camera(&cam); spec.frame_count];
    write_json(&out.join("cameras.json"), &cameras)?;
    let c = spec.center;
    let extent = BOUNDS * spec.radius;
    let manifest = ManifestFile {
        frame_count: spec.frame_count,
        fps: spec.fps,
        width: spec.width,
        height: spec.height,
        background: spec.background,
        scene_bounds: SceneBounds {
            min: [c[0] - extent, c[1] - extent, c[2] - extent],
            max: [c[0] + extent, c[1] + extent, c[2] + extent],
        },
        frames_dir: "frames".into(),
        cameras: "cameras.json".into(),
        landmarks: "landmarks.csv".into(),
        audio_features: "audio_features.csv".into(),
        au: "au.csv".into(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(signals)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numeric(format!("json encode: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
