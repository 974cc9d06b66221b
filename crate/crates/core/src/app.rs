//! The command-level workflow shared by the `talkfield` binary and the
//! examples: a run directory remembers its dataset and model shape in
//! `run.json`, so later stages only need the run path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blink::read_au_csv;
use crate::dataset::{frame_file_name, generate_synthetic, load_dataset, normalize_scene, DatasetManifest, SyntheticSceneSpec, SyntheticSignals};
use crate::error::{Error, Result};
use crate::field::Ablation;
use crate::metrics::{lmd_per_frame, lmd_pixels_per_frame, psnr, EvalReport, LMD_PIXEL_UNITS};
use crate::motion::{read_audio_csv, read_landmarks_csv, write_landmarks_csv, AudioFeatureFrame, LandmarkSet};
use crate::nn::ParamStore;
use crate::pipeline::{ModelConfig, TalkingHead};
use crate::render::{Camera, Image, RenderSettings};
use crate::train::{init_model, train_field, train_motion, FieldOutcome, MotionData, MotionOutcome, RunDir, Stage, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub dataset: PathBuf,
    pub model: ModelConfig,
}

impl RunInfo {
    pub fn path(run: &Path) -> PathBuf {
        run.join("run.json")
    }

    pub fn save(&self, run: &Path) -> Result<()> {
        let p = Self::path(run);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    pub fn load(run: &Path) -> Result<Self> {
        let p = Self::path(run);
        let text = std::fs::read_to_string(&p)
            .map_err(|_| Error::State(format!("{} is missing; run train-motion first", p.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        normalize_scene(&load_dataset(&self.dataset)?)
    }
}

pub fn synth(spec: &SyntheticSceneSpec, out: &Path) -> Result<SyntheticSignals> {
    generate_synthetic(spec, out)
}

/// Starts a run: builds the model for the dataset and fits the motion stage.
pub fn train_motion_run(dataset: &Path, run_dir: &Path, cfg: &TrainConfig) -> Result<MotionOutcome> {
    cfg.validate()?;
    let manifest = normalize_scene(&load_dataset(dataset)?)?;
    let data = MotionData::from_manifest(&manifest)?;
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &data, cfg)?;
    let run = RunDir::create(run_dir)?;
    RunInfo {
        dataset: dataset.to_path_buf(),
        model: model.config.clone(),
    }
    .save(run_dir)?;
    train_motion(&model, &mut store, &data, cfg, &run)
}

/// Rebuilds the model registered in `run.json`, with initial values.
pub fn rebuild(info: &RunInfo, seed: u64) -> Result<(TalkingHead, ParamStore<f32>)> {
    let mut store = ParamStore::new();
    let model = TalkingHead::new(&mut store, info.model.clone(), None, seed)?;
    Ok((model, store))
}

pub fn train_field_run(run_dir: &Path, stage: Stage, cfg: &TrainConfig) -> Result<FieldOutcome> {
    let info = RunInfo::load(run_dir)?;
    let manifest = info.manifest()?;
    let (model, mut store) = rebuild(&info, cfg.seed)?;
    let run = RunDir::create(run_dir)?;
    train_field(&model, &mut store, &manifest, stage, cfg, &run)
}

/// The checkpoint inference uses: an explicit path, else the latest fine,
/// else the latest coarse checkpoint.
pub fn inference_checkpoint(run_dir: &Path, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let run = RunDir::create(run_dir)?;
    for stage in [Stage::Fine, Stage::Coarse] {
        if let Some((p, _)) = run.latest(stage)? {
            return Ok(p);
        }
    }
    Err(Error::State(format!("no field checkpoint in {}", run_dir.display())))
}

pub struct Trained {
    pub info: RunInfo,
    pub manifest: DatasetManifest,
    pub model: TalkingHead,
    pub store: ParamStore<f32>,
    pub checkpoint: PathBuf,
}

pub fn load_trained(run_dir: &Path, checkpoint: Option<&Path>, seed: u64) -> Result<Trained> {
    let info = RunInfo::load(run_dir)?;
    let manifest = info.manifest()?;
    let (model, mut store) = rebuild(&info, seed)?;
    let checkpoint = inference_checkpoint(run_dir, checkpoint)?;
    store.load_from(&checkpoint)?;
    Ok(Trained {
        info,
        manifest,
        model,
        store,
        checkpoint,
    })
}

impl Trained {
    pub fn settings(&self, cfg: &TrainConfig) -> RenderSettings {
        RenderSettings {
            samples: cfg.render_samples,
            background: self.manifest.background,
            jitter: false,
            seed: cfg.seed,
        }
    }

    /// Audio + AU to landmarks to frames. Frame `i` uses the dataset camera
    /// of frame `i mod N`. Only `frames` are rendered (all when `None`).
    pub fn infer(
        &self,
        audio: &[AudioFeatureFrame],
        au: &[f32],
        ablation: Ablation,
        frames: Option<&[usize]>,
        cfg: &TrainConfig,
    ) -> Result<(Vec<LandmarkSet>, Vec<(usize, Image)>)> {
        let inputs = self.model.motion_inputs(&self.store, audio, au)?;
        let landmarks = self.model.predict_landmarks(&self.store, &inputs, ablation)?;
        let all: Vec<usize> = (0..audio.len()).collect();
        let settings = self.settings(cfg);
        let n = self.manifest.frame_count();
        let mut images = Vec::new();
        for &f in frames.unwrap_or(&all) {
            let cond = self.model.condition(&self.store, &landmarks[f], &inputs, f, ablation)?;
            let cam = &self.manifest.frames[f % n].camera;
            images.push((f, self.model.render(&self.store, cam, &cond, &settings)?));
        }
        Ok((landmarks, images))
    }
}

/// Renders one PNG per audio frame plus `landmarks.csv` of the predicted
/// landmarks. Without an AU file the dataset's AU track is reused when it
/// has the same length, otherwise eyes are driven as open (AU 0).
pub fn render_run(
    run_dir: &Path,
    audio_path: &Path,
    au_path: Option<&Path>,
    out: &Path,
    checkpoint: Option<&Path>,
    ablation: Ablation,
    cfg: &TrainConfig,
) -> Result<Vec<PathBuf>> {
    let trained = load_trained(run_dir, checkpoint, cfg.seed)?;
    let audio = read_audio_csv(audio_path)?;
    let au = match au_path {
        Some(p) => read_au_csv(p)?,
        None if trained.manifest.frame_count() == audio.len() => trained.manifest.au_values(),
        None => vec![0.0; audio.len()],
    };
    let (landmarks, images) = trained.infer(&audio, &au, ablation, None, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::with_capacity(images.len());
    for (f, img) in images {
        let p = out.join(frame_file_name(f));
        img.save_png(&p)?;
        written.push(p);
    }
    write_landmarks_csv(&out.join("landmarks.csv"), &landmarks)?;
    Ok(written)
}

/// Frame indices of `00000.png`-style files in `dir`, ascending.
pub fn png_frames(dir: &Path) -> Result<Vec<usize>> {
    let mut frames = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if path.extension().is_some_and(|e| e == "png") {
            if let Ok(i) = stem.parse::<usize>() {
                frames.push(i);
            }
        }
    }
    frames.sort_unstable();
    Ok(frames)
}

/// Evaluation. With `pred` set, compares the PNGs and `landmarks.csv` in
/// that directory against `gt` (a directory laid out the same way) or, by
/// default, the dataset. Without `pred`, renders the held-out frames of
/// the dataset from its own audio and AU tracks and scores those.
pub fn eval_run(
    run_dir: &Path,
    pred: Option<&Path>,
    gt: Option<&Path>,
    out: &Path,
    checkpoint: Option<&Path>,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    let info = RunInfo::load(run_dir)?;
    let manifest = info.manifest()?;
    let gt_image = |f: usize| -> Result<Image> {
        match gt {
            Some(dir) => Image::load_png(&dir.join(frame_file_name(f))),
            None if f < manifest.frame_count() => manifest.load_image(f),
            None => Err(Error::dataset("frames", Some(f), "no ground-truth frame with this index")),
        }
    };
    let gt_landmarks = match gt.map(|d| d.join("landmarks.csv")).filter(|p| p.exists()) {
        Some(p) => read_landmarks_csv(&p)?,
        None => manifest.landmark_sets(),
    };
    let (ident, frames, images, pred_lm) = match pred {
        Some(dir) => {
            let frames = png_frames(dir)?;
            let images = frames
                .iter()
                .map(|&f| Image::load_png(&dir.join(frame_file_name(f))))
                .collect::<Result<Vec<_>>>()?;
            let lm = read_landmarks_csv(&dir.join("landmarks.csv"))?;
            (dir.display().to_string(), frames, images, lm)
        }
        None => {
            let trained = load_trained(run_dir, checkpoint, cfg.seed)?;
            let frames = cfg.holdout_frames(manifest.frame_count());
            let (lm, rendered) = trained.infer(
                &manifest.audio_frames(),
                &manifest.au_values(),
                Ablation::default(),
                Some(&frames),
                cfg,
            )?;
            let name = trained.checkpoint.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (name, frames, rendered.into_iter().map(|(_, i)| i).collect(), lm)
        }
    };
    if frames.is_empty() {
        return Err(Error::Config("no frames to evaluate".into()));
    }
    let mut psnrs = Vec::with_capacity(frames.len());
    for (&f, img) in frames.iter().zip(&images) {
        psnrs.push(psnr(img, &gt_image(f)?)?);
    }
    let pick = |sets: &[LandmarkSet], what: &str| -> Result<Vec<LandmarkSet>> {
        frames
            .iter()
            .map(|&f| {
                sets.get(f)
                    .cloned()
                    .ok_or_else(|| Error::dataset(format!("{what} landmarks.csv"), Some(f), "missing landmark row"))
            })
            .collect()
    };
    let (pred_lm, gt_lm) = (pick(&pred_lm, "predicted")?, pick(&gt_landmarks, "ground-truth")?);
    let n = manifest.frame_count();
    let lmd = if cfg.lmd_pixels {
        let cams: Vec<&Camera> = frames.iter().map(|&f| &manifest.frames[f % n].camera).collect();
        lmd_pixels_per_frame(&pred_lm, &gt_lm, &cams)?
    } else {
        lmd_per_frame(&pred_lm, &gt_lm)?
    };
    let mut report = EvalReport::new(ident, frames, psnrs, lmd)?;
    if cfg.lmd_pixels {
        report.lmd_units = LMD_PIXEL_UNITS.into();
    }
    report.save(out)?;
    Ok(report)
}
