use std::fs;
use std::path::Path;

use talkfield::dataset::{generate_synthetic, load_dataset, normalize_scene, SyntheticSceneSpec};
use talkfield::motion::{read_landmarks_csv, AudioFeatureFrame, LandmarkSet};
use talkfield::train::MotionData;
use talkfield::Error;
use tempfile::TempDir;

fn small_spec(frames: usize) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        frame_count: frames,
        width: 24,
        height: 24,
        focal: 41.25,
        ..SyntheticSceneSpec::default()
    }
}

fn files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn replace_line(path: &Path, line: usize, text: &str) {
    let body = fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = body.lines().map(String::from).collect();
    lines[line] = text.to_string();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn eight_frame_scene_loads_with_eight_frames() {
    let dir = TempDir::new().unwrap();
    generate_synthetic(&small_spec(8), dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap().frame_count(), 8);
}

#[test]
fn generation_is_bitwise_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    generate_synthetic(&small_spec(6), a.path()).unwrap();
    generate_synthetic(&small_spec(6), b.path()).unwrap();
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 6 + 5);
    assert_eq!(fa, fb);
}

#[test]
fn zero_amplitude_and_depth_freeze_every_frame() {
    let dir = TempDir::new().unwrap();
    let spec = SyntheticSceneSpec {
        mouth_amplitude: 0.0,
        blink_depth: 0.0,
        ..small_spec(5)
    };
    generate_synthetic(&spec, dir.path()).unwrap();
    let m = load_dataset(dir.path()).unwrap();
    let first = m.load_image(0).unwrap();
    for i in 1..5 {
        assert_eq!(m.load_image(i).unwrap().data, first.data);
        assert_eq!(m.frames[i].landmarks.points(), m.frames[0].landmarks.points());
    }
}

#[test]
fn lip_landmark_slope_matches_the_amplitude() {
    let dir = TempDir::new().unwrap();
    let spec = small_spec(40);
    let signals = generate_synthetic(&spec, dir.path()).unwrap();
    let lm = read_landmarks_csv(&dir.path().join("landmarks.csv")).unwrap();
    let ys: Vec<f64> = lm.iter().map(|s| s.point(49)[1] as f64).collect();
    let xs = &signals.drive;
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((slope / spec.mouth_amplitude - 1.0).abs() < 0.01, "slope {slope}");
}

#[test]
fn out_of_range_au_names_file_frame_and_rule() {
    let dir = TempDir::new().unwrap();
    generate_synthetic(&small_spec(6), dir.path()).unwrap();
    replace_line(&dir.path().join("au.csv"), 4, "3,7.2");
    match load_dataset(dir.path()) {
        Err(Error::Dataset { file, frame, rule }) => {
            assert!(file.ends_with("au.csv"), "{file}");
            assert_eq!(frame, Some(3));
            assert!(rule.contains("[0, 5]") || rule.contains("range"), "{rule}");
        }
        other => panic!("expected a dataset error, got {other:?}"),
    }
}

#[test]
fn landmark_outside_bounds_names_the_landmark() {
    let dir = TempDir::new().unwrap();
    generate_synthetic(&small_spec(6), dir.path()).unwrap();
    let path = dir.path().join("landmarks.csv");
    let body = fs::read_to_string(&path).unwrap();
    let row: Vec<String> = body.lines().nth(2).unwrap().split(',').map(String::from).collect();
    let mut row = row;
    row[17 * 3] = "40.0".into();
    replace_line(&path, 2, &row.join(","));
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Dataset { frame: Some(1), .. }), "{err}");
    assert!(err.to_string().contains("landmark 17"), "{err}");
}

#[test]
fn missing_file_rejects_the_whole_dataset() {
    let dir = TempDir::new().unwrap();
    generate_synthetic(&small_spec(4), dir.path()).unwrap();
    fs::remove_file(dir.path().join("frames").join("00002.png")).unwrap();
    assert!(load_dataset(dir.path()).unwrap_err().is_validation());
}

#[test]
fn normalization_lands_landmarks_in_the_unit_cube() {
    let dir = TempDir::new().unwrap();
    generate_synthetic(&small_spec(4), dir.path()).unwrap();
    let m = normalize_scene(&load_dataset(dir.path()).unwrap()).unwrap();
    for f in &m.frames {
        assert!(f.landmarks.points().iter().flatten().all(|&c| (0.0..=1.0).contains(&c)));
    }
}

#[test]
fn misaligned_motion_tracks_name_the_files() {
    let audio: Vec<AudioFeatureFrame> = (0..5).map(|i| AudioFeatureFrame::new(i, vec![0.0; 3])).collect();
    let lm: Vec<LandmarkSet> = (0..4).map(|i| LandmarkSet::new(i, vec![[0.5; 3]; 68]).unwrap()).collect();
    let err = MotionData::new(audio, lm, vec![0.0; 5]).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("landmarks.csv") && text.contains("audio_features.csv"), "{text}");
}
