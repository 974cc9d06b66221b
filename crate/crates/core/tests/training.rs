use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talkfield::dataset::{generate_synthetic, load_dataset, normalize_scene, DatasetManifest, SyntheticSceneSpec};
use talkfield::field::Ablation;
use talkfield::motion::{positional_loss, AudioFeatureFrame, LandmarkSet};
use talkfield::nn::ParamStore;
use talkfield::pipeline::{ModelConfig, TalkingHead};
use talkfield::train::{init_model, train_field, train_motion, MotionData, PerceptualMetric, RunDir, Stage, TrainConfig};
use talkfield::Error;
use tempfile::TempDir;

fn scene(dir: &TempDir, frames: usize) -> DatasetManifest {
    let spec = SyntheticSceneSpec {
        frame_count: frames,
        width: 32,
        height: 32,
        focal: 55.0,
        ..SyntheticSceneSpec::default()
    };
    generate_synthetic(&spec, &dir.path().join("data")).unwrap();
    normalize_scene(&load_dataset(&dir.path().join("data")).unwrap()).unwrap()
}

fn config(pairs: &[(&str, &str)]) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn predicted_lp(model: &TalkingHead, store: &ParamStore<f32>, data: &MotionData) -> f64 {
    let inputs = model.motion_inputs(store, &data.audio, &data.au).unwrap();
    let pred = model.predict_landmarks(store, &inputs, Ablation::default()).unwrap();
    positional_loss(&pred, &data.landmarks).unwrap()
}

#[test]
fn constant_targets_are_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let audio: Vec<AudioFeatureFrame> = (0..30)
        .map(|i| AudioFeatureFrame::new(i, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();
    let target: Vec<[f32; 3]> = (0..68).map(|i| [0.3 + 0.005 * i as f32, 0.6, 0.5]).collect();
    let lms: Vec<LandmarkSet> = (0..30).map(|i| LandmarkSet::new(i, target.clone()).unwrap()).collect();
    let data = MotionData::new(audio, lms, vec![0.0; 30]).unwrap();
    let cfg = config(&[("motion.iters", "300"), ("train.checkpoint_every", "1000")]);
    let dir = TempDir::new().unwrap();
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &data, &cfg).unwrap();
    train_motion(&model, &mut store, &data, &cfg, &RunDir::create(dir.path()).unwrap()).unwrap();
    let lp = predicted_lp(&model, &store, &data);
    assert!(lp < 1e-3, "L_p = {lp}");
}

#[test]
fn mean_bias_start_is_no_worse_than_zero_bias() {
    let dir = TempDir::new().unwrap();
    let m = scene(&dir, 8);
    let data = MotionData::from_manifest(&m).unwrap();
    let cfg = ModelConfig::new(29, 2, true);
    let mean = LandmarkSet::mean(&data.landmarks).unwrap();
    let (mut a, mut b) = (ParamStore::new(), ParamStore::new());
    let with_mean = TalkingHead::new(&mut a, cfg.clone(), Some(&mean), 5).unwrap();
    let zero = TalkingHead::new(&mut b, cfg, None, 5).unwrap();
    let (lm, lz) = (predicted_lp(&with_mean, &a, &data), predicted_lp(&zero, &b, &data));
    assert!(lm <= lz, "mean-bias {lm} vs zero-bias {lz}");
}

#[test]
fn motion_curve_and_checkpoint_repeat_under_a_seed() {
    let dir = TempDir::new().unwrap();
    let m = scene(&dir, 8);
    let data = MotionData::from_manifest(&m).unwrap();
    let cfg = config(&[("motion.iters", "40"), ("train.checkpoint_every", "1000")]);
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let mut store = ParamStore::new();
        let model = init_model(&mut store, &data, &cfg).unwrap();
        let run = RunDir::create(&dir.path().join(name)).unwrap();
        let out = train_motion(&model, &mut store, &data, &cfg, &run).unwrap();
        outs.push((
            out.curve,
            fs::read(&out.checkpoint).unwrap(),
            fs::read(run.curve_path(Stage::Motion)).unwrap(),
        ));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn zero_iterations_checkpoint_the_initialization() {
    let dir = TempDir::new().unwrap();
    let m = scene(&dir, 6);
    let data = MotionData::from_manifest(&m).unwrap();
    let cfg = config(&[("motion.iters", "0")]);
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &data, &cfg).unwrap();
    let init = store.clone();
    let out = train_motion(&model, &mut store, &data, &cfg, &RunDir::create(&dir.path().join("run")).unwrap()).unwrap();
    let mut loaded = init.clone();
    let ids: Vec<_> = loaded.params().map(|(id, _)| id).collect();
    for id in ids {
        loaded.get_mut(id).iter_mut().for_each(|v| *v = 0.0);
    }
    loaded.load_from(&out.checkpoint).unwrap();
    for ((_, a), (_, b)) in init.params().zip(loaded.params()) {
        assert_eq!(a.name(), b.name());
        assert_eq!(a.value(), b.value());
    }
}

#[test]
fn fine_stage_needs_a_coarse_checkpoint() {
    let dir = TempDir::new().unwrap();
    let m = scene(&dir, 6);
    let data = MotionData::from_manifest(&m).unwrap();
    let cfg = config(&[("motion.iters", "2")]);
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &data, &cfg).unwrap();
    let run = RunDir::create(&dir.path().join("run")).unwrap();
    train_motion(&model, &mut store, &data, &cfg, &run).unwrap();
    let err = train_field(&model, &mut store, &m, Stage::Fine, &cfg, &run).unwrap_err();
    assert!(matches!(err, Error::State(_)), "{err}");
}

#[test]
fn diverging_motion_training_names_the_iteration() {
    let dir = TempDir::new().unwrap();
    let m = scene(&dir, 6);
    let data = MotionData::from_manifest(&m).unwrap();
    let cfg = config(&[("motion.iters", "50"), ("motion.lr", "1e30")]);
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &data, &cfg).unwrap();
    let run = RunDir::create(&dir.path().join("run")).unwrap();
    match train_motion(&model, &mut store, &data, &cfg, &run) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("iteration"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

/// Coarse loss on a small scene drops well below its early value; the fine
/// stage records its parent and leaves the frozen extractor untouched.
#[test]
fn coarse_then_fine_on_an_eight_frame_scene() {
    let dir = TempDir::new().unwrap();
    let m = scene(&dir, 8);
    let cfg = config(&[
        ("motion.iters", "50"),
        ("train.coarse_iters", "2000"),
        ("train.fine_iters", "4"),
        ("train.rays_per_batch", "128"),
        ("train.samples", "24"),
        ("train.fine.patch_size", "8"),
        ("train.checkpoint_every", "1000"),
    ]);
    let data = MotionData::from_manifest(&m).unwrap();
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &data, &cfg).unwrap();
    let run = RunDir::create(&dir.path().join("run")).unwrap();
    train_motion(&model, &mut store, &data, &cfg, &run).unwrap();
    let hash = PerceptualMetric::new(cfg.perceptual_seed).weight_hash();

    let coarse = train_field(&model, &mut store, &m, Stage::Coarse, &cfg, &run).unwrap();
    let early = coarse.curve.iter().find(|s| s.iteration == 10).unwrap().loss;
    let tail = &coarse.curve[coarse.curve.len() - 50..];
    let late = tail.iter().map(|s| s.loss).sum::<f64>() / tail.len() as f64;
    assert!(late < 0.25 * early, "iteration 10: {early}, last 50 mean: {late}");
    let header = fs::read_to_string(run.curve_path(Stage::Coarse)).unwrap();
    assert!(header.starts_with("iter,loss\n"));

    let fine = train_field(&model, &mut store, &m, Stage::Fine, &cfg, &run).unwrap();
    assert_eq!(fine.parent, coarse.checkpoint);
    let meta = RunDir::read_meta(&fine.checkpoint).unwrap();
    assert_eq!(meta.parent.as_deref(), Some(coarse.checkpoint.file_name().unwrap().to_str().unwrap()));
    assert_eq!(meta.perceptual_hash.as_deref(), Some(hash.as_str()));
    assert_eq!(PerceptualMetric::new(cfg.perceptual_seed).weight_hash(), hash);
    let header = fs::read_to_string(run.curve_path(Stage::Fine)).unwrap();
    assert!(header.starts_with("iter,loss,mse,perceptual\n"));
}
