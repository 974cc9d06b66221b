use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::losses::{coarse_loss, fine_loss, mouth_region, sample_patch};
use super::motion::MotionData;
use super::perceptual::PerceptualMetric;
use super::run::{CheckpointMeta, RunDir, Stage};
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::field::{Ablation, ConditionTrace, FieldOutput, FieldWorkspace};
use crate::motion::LandmarkSet;
use crate::nn::{adam_step, AdamConfig, Gradients, ParamStore};
use crate::pipeline::{MotionInputs, TalkingHead, Trainable};
use crate::render::{clamp_unit, composite, composite_backward, generate_ray, segment_lengths, stratified_sample, Camera, Composite, Image, PixelRay};

/// Everything the field stages read: frames, cameras, tracked landmarks and
/// the per-frame motion signals computed by the (frozen) motion networks.
#[derive(Clone, Debug)]
pub struct FieldData {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub landmarks: Vec<LandmarkSet>,
    pub motion: MotionInputs,
    pub background: [f32; 3],
}

impl FieldData {
    pub fn new(model: &TalkingHead, store: &ParamStore<f32>, manifest: &DatasetManifest) -> Result<Self> {
        let data = MotionData::from_manifest(manifest)?;
        Ok(FieldData {
            cameras: manifest.frames.iter().map(|f| f.camera.clone()).collect(),
            images: manifest.load_images()?,
            landmarks: data.landmarks.clone(),
            motion: model.motion_inputs(store, &data.audio, &data.au)?,
            background: manifest.background,
        })
    }

    pub fn frames(&self) -> usize {
        self.cameras.len()
    }

    /// Teacher-forced condition of a frame: tracked landmarks, not predicted.
    pub fn condition(&self, model: &TalkingHead, store: &ParamStore<f32>, frame: usize, ablation: Ablation) -> Result<Vec<f32>> {
        model.condition(store, &self.landmarks[frame], &self.motion, frame, ablation)
    }
}

/// One row of `curves/{coarse,fine}.csv`; `mse` and `perceptual` are only
/// meaningful for the fine stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldStep {
    pub iteration: usize,
    pub loss: f64,
    pub mse: f64,
    pub perceptual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutcome {
    pub curve: Vec<FieldStep>,
    pub checkpoint: PathBuf,
    pub parent: PathBuf,
}

pub const COARSE_CURVE_HEADER: [&str; 2] = ["iter", "loss"];
pub const FINE_CURVE_HEADER: [&str; 4] = ["iter", "loss", "mse", "perceptual"];

/// Retained forward state of a set of rays through one frame's field.
struct RayBatch {
    rows: Vec<Option<RayRows>>,
    rgb: Vec<[f32; 3]>,
    ws: FieldWorkspace<f32>,
}

struct RayRows {
    start: usize,
    deltas: Vec<f32>,
    forward: Composite<f32>,
}

/// Renders `pixels` with stratified samples, keeping what backward needs.
#[allow(clippy::too_many_arguments)]
fn forward_rays<R: Rng>(
    model: &TalkingHead,
    store: &ParamStore<f32>,
    cam: &Camera,
    cond: &[f32],
    pixels: &[(usize, usize)],
    samples: usize,
    jitter: bool,
    background: [f32; 3],
    rng: &mut R,
) -> Result<RayBatch> {
    let mut positions = Vec::with_capacity(pixels.len() * samples);
    let mut directions = Vec::with_capacity(pixels.len() * samples);
    let mut rows = Vec::with_capacity(pixels.len());
    for &(px, py) in pixels {
        match generate_ray(cam, px, py)? {
            PixelRay::Miss { .. } => rows.push(None),
            PixelRay::Hit(ray) => {
                let t = stratified_sample(&ray, samples, jitter, rng)?;
                let d = ray.direction.map(|c| c as f32);
                rows.push(Some(RayRows {
                    start: positions.len(),
                    deltas: segment_lengths(&t, ray.t_far).iter().map(|&x| x as f32).collect(),
                    forward: Composite {
                        rgb: [0.0; 3],
                        opacity: 0.0,
                        transmittance: Vec::new(),
                        final_transmittance: 1.0,
                        weights: Vec::new(),
                    },
                }));
                positions.extend(t.iter().map(|&s| clamp_unit(ray.at(s)).map(|c| c as f32)));
                directions.extend(std::iter::repeat_n(d, samples));
            }
        }
    }
    let mut ws = FieldWorkspace::new();
    let mut rgb = vec![background; pixels.len()];
    if !positions.is_empty() {
        let outputs = model.field.forward_batch(store, &positions, &directions, cond, &mut ws)?.to_vec();
        for (slot, row) in rgb.iter_mut().zip(rows.iter_mut()) {
            if let Some(r) = row {
                r.forward = composite(&outputs[r.start..r.start + samples], &r.deltas, background)?;
                *slot = r.forward.rgb;
            }
        }
    }
    Ok(RayBatch { rows, rgb, ws })
}

/// Back-propagates per-pixel `d_rgb`; returns the summed condition gradient.
fn backward_rays(
    model: &TalkingHead,
    store: &ParamStore<f32>,
    batch: &RayBatch,
    samples: usize,
    background: [f32; 3],
    d_rgb: &[[f32; 3]],
    grads: &mut Gradients<f32>,
) -> Result<Vec<f32>> {
    let cw = model.field.cond_width();
    let n = batch.ws.outputs().len();
    if n == 0 {
        return Ok(vec![0.0; cw]);
    }
    let outputs: &[FieldOutput<f32>] = batch.ws.outputs();
    let mut d_sigma = vec![0.0f32; n];
    let mut d_color = vec![[0.0f32; 3]; n];
    for (row, &g) in batch.rows.iter().zip(d_rgb) {
        if let Some(r) = row {
            let span = r.start..r.start + samples;
            let (ds, dc) = composite_backward(&outputs[span.clone()], &r.deltas, background, &r.forward, g, 0.0);
            d_sigma[span.clone()].copy_from_slice(&ds);
            d_color[span].copy_from_slice(&dc);
        }
    }
    let mut d_cond_rows = vec![0.0f32; n * cw];
    model
        .field
        .backward_batch(store, &batch.ws, &d_sigma, &d_color, grads, Some(&mut d_cond_rows))?;
    let mut d_cond = vec![0.0f32; cw];
    for row in d_cond_rows.chunks_exact(cw) {
        d_cond.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    Ok(d_cond)
}

struct JobResult {
    loss: f64,
    mse: f64,
    perceptual: f64,
    rays: usize,
    grads: Gradients<f32>,
}

/// Everything a stage needs that does not change between iterations.
struct StageContext<'a> {
    model: &'a TalkingHead,
    data: &'a FieldData,
    cfg: &'a TrainConfig,
    stage: Stage,
    metric: Option<&'a PerceptualMetric>,
}

impl StageContext<'_> {
    fn job(&self, store: &ParamStore<f32>, frame: usize, rays: usize, rng: &mut ChaCha8Rng) -> Result<JobResult> {
        let (model, data, cfg) = (self.model, self.data, self.cfg);
        let cam = &data.cameras[frame];
        let gt = &data.images[frame];
        let mut cond_trace = ConditionTrace::new();
        let zw = model.config.vae.latent_width;
        let db = model.config.blink.embedding_width;
        let cond = model
            .field
            .condition()
            .encode(
                store,
                &data.landmarks[frame],
                &data.motion.latents[frame * zw..(frame + 1) * zw],
                &data.motion.blink[frame * db..(frame + 1) * db],
                Ablation::default(),
                &mut cond_trace,
            )?
            .fused();
        let (pixels, patch) = match self.stage {
            Stage::Fine => {
                let region = mouth_region(&data.landmarks[frame], cam, cfg.mouth_dilation)?;
                let patch = sample_patch(&region, cfg.patch_size, rng)?;
                (patch.pixels().collect::<Vec<_>>(), true)
            }
            _ => (
                (0..rays)
                    .map(|_| (rng.gen_range(0..cam.width), rng.gen_range(0..cam.height)))
                    .collect(),
                false,
            ),
        };
        let bg = data.background;
        let batch = forward_rays(model, store, cam, &cond, &pixels, cfg.train_samples, cfg.jitter, bg, rng)?;
        let target: Vec<[f32; 3]> = pixels.iter().map(|&(x, y)| gt.pixel(x, y)).collect();
        let mut grads = Gradients::for_store(store);
        let (loss, mse, perceptual, d_rgb) = if patch {
            let metric = self.metric.expect("fine stage carries a metric");
            let pred: Vec<f32> = batch.rgb.iter().flatten().copied().collect();
            let tgt: Vec<f32> = target.iter().flatten().copied().collect();
            let mut g = vec![0.0f32; pred.len()];
            let l = fine_loss(&pred, &tgt, cfg.patch_size, metric, cfg.lambda, Some(&mut g))?;
            let d: Vec<[f32; 3]> = g.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            (l.total as f64, l.mse as f64, l.perceptual as f64, d)
        } else {
            let l = coarse_loss(&batch.rgb, &target)?;
            let d = batch
                .rgb
                .iter()
                .zip(&target)
                .map(|(p, t)| [0, 1, 2].map(|k| 2.0 * (p[k] - t[k])))
                .collect();
            (l, l, 0.0, d)
        };
        let d_cond = backward_rays(model, store, &batch, cfg.train_samples, bg, &d_rgb, &mut grads)?;
        model.field.condition().backward(store, &cond_trace, &d_cond, &mut grads, None)?;
        Ok(JobResult {
            loss,
            mse,
            perceptual,
            rays: pixels.len(),
            grads,
        })
    }
}

/// Runs the coarse or fine field stage. Coarse resumes from the latest
/// motion checkpoint, fine from the latest coarse checkpoint; a missing
/// parent is a state error. Only field arrays (hash tables, decoders and
/// the condition encoders) are updated.
pub fn train_field(
    model: &TalkingHead,
    store: &mut ParamStore<f32>,
    manifest: &DatasetManifest,
    stage: Stage,
    cfg: &TrainConfig,
    run: &RunDir,
) -> Result<FieldOutcome> {
    cfg.validate()?;
    let (parent_stage, iters) = match stage {
        Stage::Coarse => (Stage::Motion, cfg.coarse_iters),
        Stage::Fine => (Stage::Coarse, cfg.fine_iters),
        Stage::Motion => return Err(Error::State("train_field runs the coarse or fine stage".into())),
    };
    let (parent, _) = run
        .latest(parent_stage)?
        .ok_or_else(|| Error::State(format!("{stage} stage needs a {parent_stage} checkpoint in {}", run.root().display())))?;
    store.load_from(&parent)?;
    let data = FieldData::new(model, store, manifest)?;
    let train = cfg.training_frames(data.frames());
    if train.is_empty() {
        return Err(Error::Config("no training frames after holdout".into()));
    }
    if stage == Stage::Coarse {
        let sets: Vec<LandmarkSet> = train.iter().map(|&f| data.landmarks[f].clone()).collect();
        model.field.condition().fit_normalization(store, &sets)?;
    }
    if stage == Stage::Fine {
        let cam = &data.cameras[train[0]];
        if cfg.patch_size > cam.width || cfg.patch_size > cam.height {
            return Err(Error::Config(format!(
                "patch size {} exceeds the {}x{} image",
                cfg.patch_size, cam.width, cam.height
            )));
        }
    }
    model.set_trainable(store, Trainable::Field);

    let metric = PerceptualMetric::new(cfg.perceptual_seed);
    let hash = metric.weight_hash();
    let ctx = StageContext {
        model,
        data: &data,
        cfg,
        stage,
        metric: (stage == Stage::Fine).then_some(&metric),
    };
    let salt = match stage {
        Stage::Coarse => 0x636f_6172_7365,
        _ => 0x6669_6e65,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
    let scale = if stage == Stage::Fine { cfg.fine_lr_scale } else { 1.0 };
    let adam = AdamConfig::new(cfg.lr * scale).with_embedding_lr(cfg.embedding_lr * scale);
    let fpb = cfg.frames_per_batch;
    let rays_per_frame = (cfg.rays_per_batch / fpb).max(1);
    let mut grads = Gradients::for_store(store);
    let mut curve = Vec::with_capacity(iters);
    let arrays = store.len();
    let meta = |iteration: usize, loss: Option<f64>| CheckpointMeta {
        stage,
        iteration,
        parent: parent.file_name().map(|n| n.to_string_lossy().into_owned()),
        seed: cfg.seed,
        last_loss: loss,
        arrays,
        perceptual_hash: (stage == Stage::Fine).then(|| hash.clone()),
    };
    let mut last = None;

    for iter in 0..iters {
        let frames: Vec<usize> = (0..fpb).map(|_| train[rng.gen_range(0..train.len())]).collect();
        let frozen: &ParamStore<f32> = store;
        let results: Vec<Result<JobResult>> = frames
            .par_iter()
            .enumerate()
            .map(|(j, &frame)| {
                let mut job_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt);
                job_rng.set_stream(((iter as u64) << 16) | j as u64);
                ctx.job(frozen, frame, rays_per_frame, &mut job_rng)
            })
            .collect();
        let (mut loss, mut mse, mut perceptual, mut rays) = (0.0, 0.0, 0.0, 0usize);
        for r in results {
            let r = r?;
            loss += r.loss;
            mse += r.mse;
            perceptual += r.perceptual;
            rays += r.rays;
            grads.accumulate(&r.grads)?;
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("{stage} loss is not finite at iteration {iter}")));
        }
        // gradients are per-ray means; the fine curve reports per-patch sums
        let norm = match stage {
            Stage::Fine => fpb as f64,
            _ => rays as f64,
        };
        grads.scale(1.0 / rays as f32);
        adam_step(store, &mut grads, &adam).map_err(|e| Error::Numeric(format!("{stage} iteration {iter}: {e}")))?;
        let step = FieldStep {
            iteration: iter,
            loss: loss / norm,
            mse: mse / norm,
            perceptual: perceptual / norm,
        };
        last = Some(step.loss);
        curve.push(step);
        let done = iter + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < iters {
            run.save_checkpoint(store, &meta(done, last))?;
        }
    }

    let checkpoint = run.save_checkpoint(store, &meta(iters, last))?;
    let rows: Vec<Vec<f64>> = curve
        .iter()
        .map(|s| match stage {
            Stage::Fine => vec![s.iteration as f64, s.loss, s.mse, s.perceptual],
            _ => vec![s.iteration as f64, s.loss],
        })
        .collect();
    let header: &[&str] = match stage {
        Stage::Fine => &FINE_CURVE_HEADER,
        _ => &COARSE_CURVE_HEADER,
    };
    run.write_curve(stage, header, &rows)?;
    Ok(FieldOutcome {
        curve,
        checkpoint,
        parent,
    })
}
