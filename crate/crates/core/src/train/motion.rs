use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::run::{CheckpointMeta, RunDir, Stage};
use crate::blink::{au_window, blink_input, mean_eye_aspect_ratio, openness_from_ear, predictor_input, BlinkTrace};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::motion::{
    positional_loss_flat, sequence_width, temporal_filter, AudioFeatureFrame, DltTrace, LandmarkSet, VaeTrace,
    LANDMARK_VALUES,
};
use crate::nn::{adam_step, AdamConfig, Gradients, MlpTrace, ParamStore};
use crate::pipeline::{ModelConfig, TalkingHead, Trainable};

/// Frame-aligned motion supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionData {
    pub audio: Vec<AudioFeatureFrame>,
    pub landmarks: Vec<LandmarkSet>,
    pub au: Vec<f32>,
}

impl MotionData {
    pub fn new(audio: Vec<AudioFeatureFrame>, landmarks: Vec<LandmarkSet>, au: Vec<f32>) -> Result<Self> {
        let n = audio.len();
        for (file, len) in [("landmarks.csv", landmarks.len()), ("au.csv", au.len())] {
            if len != n {
                return Err(Error::dataset(
                    file,
                    Some(len.min(n)),
                    format!("{file} has {len} frames but audio_features.csv has {n}"),
                ));
            }
        }
        if n == 0 {
            return Err(Error::dataset("audio_features.csv", None, "no frames"));
        }
        Ok(MotionData { audio, landmarks, au })
    }

    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        Self::new(manifest.audio_frames(), manifest.landmark_sets(), manifest.au_values())
    }

    pub fn frames(&self) -> usize {
        self.audio.len()
    }
}

/// One row of `curves/motion.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionStep {
    pub iteration: usize,
    pub loss: f64,
    pub positional: f64,
    pub vae: f64,
    pub blink: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionOutcome {
    pub curve: Vec<MotionStep>,
    pub checkpoint: PathBuf,
}

pub const MOTION_CURVE_HEADER: [&str; 5] = ["iter", "loss", "positional", "vae", "blink"];

/// Builds the model for `data`: the DLT output bias starts at the mean
/// training-frame landmarks and every array is seeded from `cfg.seed`.
pub fn init_model(store: &mut ParamStore<f32>, data: &MotionData, cfg: &TrainConfig) -> Result<TalkingHead> {
    let width = sequence_width(&data.audio)?;
    let config = ModelConfig::new(width, cfg.filter_half_width, cfg.latent_input);
    let train: Vec<LandmarkSet> = cfg
        .training_frames(data.frames())
        .into_iter()
        .map(|f| data.landmarks[f].clone())
        .collect();
    let mean = LandmarkSet::mean(if train.is_empty() { &data.landmarks } else { &train })?;
    TalkingHead::new(store, config, Some(&mean), cfg.seed)
}

/// Eye openness targets and raw EAR per frame, from the tracked landmarks.
pub fn eye_targets(landmarks: &[LandmarkSet]) -> Result<(Vec<f32>, Vec<f32>)> {
    let ears = landmarks.iter().map(mean_eye_aspect_ratio).collect::<Result<Vec<f64>>>()?;
    let open = openness_from_ear(&ears)?;
    Ok((open, ears.iter().map(|&e| e as f32).collect()))
}

/// Jointly fits the VAE, DLT and blink networks on the training frames.
/// Only arrays under `vae.`, `dlt.` and `blink.` move.
pub fn train_motion(
    model: &TalkingHead,
    store: &mut ParamStore<f32>,
    data: &MotionData,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<MotionOutcome> {
    cfg.validate()?;
    model.set_trainable(store, Trainable::Motion);
    let frames = data.frames();
    let train = cfg.training_frames(frames);
    if train.is_empty() {
        return Err(Error::Config("no training frames after holdout".into()));
    }
    let mc = &model.config;
    let (d, zw, db) = (mc.vae.input_width, mc.vae.latent_width, mc.blink.embedding_width);
    let w = mc.dlt.window;
    let k = mc.blink.history;
    let smoothed = temporal_filter(&data.audio, mc.filter_half_width)?;
    let smooth_flat: Vec<f32> = smoothed.iter().flat_map(|f| f.values.iter().copied()).collect();
    let targets: Vec<f32> = data.landmarks.iter().flat_map(|l| l.flatten()).collect();
    let (openness, ears) = eye_targets(&data.landmarks)?;
    let blink_rows: Vec<Vec<f32>> = (0..frames)
        .map(|f| blink_input(&au_window(&data.au, f, mc.blink.au_window), &smoothed[f], mc.blink.au_window))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6f_7469_6f6e);
    let adam = AdamConfig::new(cfg.motion_lr);
    let mut grads = Gradients::for_store(store);
    let mut vae_trace = VaeTrace::new();
    let mut dlt_trace = DltTrace::new();
    let mut blink_trace = BlinkTrace::default();
    let mut hist_trace = MlpTrace::new();
    let mut next_trace = MlpTrace::new();
    let mut curve = Vec::with_capacity(cfg.motion_iters);
    let mut last = None;

    for iter in 0..cfg.motion_iters {
        let batch = cfg.motion_batch;
        let centers: Vec<usize> = (0..batch).map(|_| train[rng.gen_range(0..train.len())]).collect();

        // VAE on every frame any window touches; DLT windows read its means.
        let order: Vec<usize> = centers
            .iter()
            .flat_map(|&c| window_frames(c, w, frames))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rows: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &f)| (f, i)).collect();
        let vae_x: Vec<f32> = order.iter().flat_map(|&f| smooth_flat[f * d..(f + 1) * d].iter().copied()).collect();
        let eps = model.vae.sample_eps(order.len(), &mut rng);
        let vae_loss = model
            .vae
            .forward_batch(store, &vae_x, order.len(), &eps, &mut vae_trace)
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("{msg} at iteration {iter}")),
                e => e,
            })?;
        let mu = vae_trace.mu(zw);
        let (src, width) = if mc.latent_input { (&mu, zw) } else { (&vae_x, d) };
        let mut windows = Vec::with_capacity(batch * w * width);
        for &c in &centers {
            for f in window_frames(c, w, frames) {
                let r = rows[&f];
                windows.extend_from_slice(&src[r * width..(r + 1) * width]);
            }
        }

        // blink mapping + readout on the centers
        let blink_x: Vec<f32> = centers.iter().flat_map(|&c| blink_rows[c].iter().copied()).collect();
        model.blink.forward_batch(store, &blink_x, batch, &mut blink_trace)?;
        let emb = blink_trace.mapping.output().to_vec();
        let open_pred = blink_trace.readout.output();
        let mut blink_mse = 0.0f64;
        let bw = cfg.blink_weight as f32;
        let mut d_open = vec![0.0f32; batch];
        for (i, &c) in centers.iter().enumerate() {
            let e = open_pred[i] - openness[c];
            blink_mse += (e as f64).powi(2) / batch as f64;
            d_open[i] = bw * 2.0 * e / batch as f32;
        }

        // DLT
        let pred = model.dlt.forward_batch(store, &windows, &emb, batch, &mut dlt_trace)?;
        let tgt: Vec<f32> = centers
            .iter()
            .flat_map(|&c| targets[c * LANDMARK_VALUES..(c + 1) * LANDMARK_VALUES].iter().copied())
            .collect();
        let mut d_pred = vec![0.0f32; pred.len()];
        let lp = positional_loss_flat(pred, &tgt, batch, Some(&mut d_pred))? as f64;
        let mut d_windows = vec![0.0f32; windows.len()];
        let mut d_emb = vec![0.0f32; batch * db];
        model
            .dlt
            .backward_batch(store, &dlt_trace, &d_pred, &mut grads, Some(&mut d_windows), Some(&mut d_emb))?;
        model.blink.backward_batch(store, &blink_trace, &d_open, Some(&d_emb), &mut grads)?;

        let mut d_mu = vec![0.0f32; order.len() * zw];
        if mc.latent_input {
            for (i, &c) in centers.iter().enumerate() {
                for (j, f) in window_frames(c, w, frames).enumerate() {
                    let r = rows[&f];
                    let g = &d_windows[(i * w + j) * zw..(i * w + j + 1) * zw];
                    d_mu[r * zw..(r + 1) * zw].iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
            }
        }
        model
            .vae
            .backward_batch(store, &vae_trace, cfg.vae_weight as f32, &mut grads, Some(&d_mu))?;

        // next-state predictor on detached history embeddings and raw EAR
        let hist: Vec<usize> = centers.iter().copied().filter(|&c| c >= k).collect();
        let mut next_mse = 0.0f64;
        if !hist.is_empty() {
            let hist_x: Vec<f32> = hist
                .iter()
                .flat_map(|&c| (c - k..c).flat_map(|f| blink_rows[f].iter().copied()))
                .collect();
            let hist_emb = model
                .blink
                .mapping()
                .forward_batch(store, &hist_x, hist.len() * k, &mut hist_trace)?
                .to_vec();
            let mut pin = Vec::with_capacity(hist.len() * k * (db + 1));
            for (i, &c) in hist.iter().enumerate() {
                let embs: Vec<Vec<f32>> = (0..k)
                    .map(|j| hist_emb[(i * k + j) * db..(i * k + j + 1) * db].to_vec())
                    .collect();
                pin.extend(predictor_input(&embs, &ears[c - k..c], db)?);
            }
            let out = model.blink.predictor().forward_batch(store, &pin, hist.len(), &mut next_trace)?;
            let n = hist.len() as f32;
            let mut d_next = vec![0.0f32; hist.len()];
            for (i, &c) in hist.iter().enumerate() {
                let e = out[i] - openness[c];
                next_mse += (e as f64).powi(2) / hist.len() as f64;
                d_next[i] = bw * 2.0 * e / n;
            }
            model
                .blink
                .predictor()
                .backward_batch(store, &next_trace, &d_next, &mut grads, None)?;
        }

        let vae_total = vae_loss.total as f64;
        let blink_total = blink_mse + next_mse;
        let loss = lp + cfg.vae_weight * vae_total + cfg.blink_weight * blink_total;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("motion loss is not finite at iteration {iter}")));
        }
        adam_step(store, &mut grads, &adam).map_err(|e| Error::Numeric(format!("motion iteration {iter}: {e}")))?;
        curve.push(MotionStep {
            iteration: iter,
            loss,
            positional: lp,
            vae: vae_total,
            blink: blink_total,
        });
        last = Some(loss);
        let done = iter + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.motion_iters {
            save(run, store, cfg, done, last)?;
        }
    }

    let checkpoint = save(run, store, cfg, cfg.motion_iters, last)?;
    let rows: Vec<Vec<f64>> = curve
        .iter()
        .map(|s| vec![s.iteration as f64, s.loss, s.positional, s.vae, s.blink])
        .collect();
    run.write_curve(Stage::Motion, &MOTION_CURVE_HEADER, &rows)?;
    Ok(MotionOutcome { curve, checkpoint })
}

/// Frames of the window centered on `center`, clamped at the ends the same
/// way the DLT input windows are.
fn window_frames(center: usize, window: usize, frames: usize) -> impl Iterator<Item = usize> {
    let half = (window / 2) as isize;
    (-half..=half).map(move |k| (center as isize + k).clamp(0, frames as isize - 1) as usize)
}

fn save(run: &RunDir, store: &ParamStore<f32>, cfg: &TrainConfig, iteration: usize, loss: Option<f64>) -> Result<PathBuf> {
    run.save_checkpoint(
        store,
        &CheckpointMeta {
            stage: Stage::Motion,
            iteration,
            parent: None,
            seed: cfg.seed,
            last_loss: loss,
            arrays: store.len(),
            perceptual_hash: None,
        },
    )
}
