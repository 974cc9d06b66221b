//! Runs the coarse and fine field stages after motion training and reports
//! held-out PSNR for each checkpoint.
//!
//!     cargo run --release --example synthetic_dataset -- /tmp/synth
//!     cargo run --release --example train_motion -- /tmp/synth /tmp/run
//!     cargo run --release --example train_field -- /tmp/synth /tmp/run train.coarse_iters=500

use std::path::PathBuf;
use std::time::Instant;

use talkfield::dataset::{load_dataset, normalize_scene};
use talkfield::field::Ablation;
use talkfield::metrics::psnr;
use talkfield::nn::ParamStore;
use talkfield::render::RenderSettings;
use talkfield::train::{init_model, train_field, FieldData, MotionData, RunDir, Stage, TrainConfig};

fn main() -> talkfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let data_dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_scene".into()));
    let run_dir = PathBuf::from(args.next().unwrap_or_else(|| "run".into()));
    let mut cfg = TrainConfig::default();
    cfg.set("train.fine.patch_size", "16")?;
    for kv in args {
        let (k, v) = kv.split_once('=').expect("overrides look like train.coarse_iters=500");
        cfg.set(k.trim(), v.trim())?;
    }

    let manifest = normalize_scene(&load_dataset(&data_dir)?)?;
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &MotionData::from_manifest(&manifest)?, &cfg)?;
    let run = RunDir::create(&run_dir)?;
    for stage in [Stage::Coarse, Stage::Fine] {
        let started = Instant::now();
        let out = train_field(&model, &mut store, &manifest, stage, &cfg, &run)?;
        let stride = (out.curve.len() / 8).max(1);
        for s in out.curve.iter().step_by(stride) {
            println!("{stage} iter {:6}  loss {:.6}", s.iteration, s.loss);
        }
        println!("{stage}: {:.1}s -> {}", started.elapsed().as_secs_f64(), out.checkpoint.display());

        let data = FieldData::new(&model, &store, &manifest)?;
        let settings = RenderSettings {
            samples: cfg.render_samples,
            background: manifest.background,
            ..RenderSettings::default()
        };
        let mut total = 0.0;
        let held = cfg.holdout_frames(data.frames());
        for &f in &held {
            let cond = data.condition(&model, &store, f, Ablation::default())?;
            let img = model.render(&store, &data.cameras[f], &cond, &settings)?;
            total += psnr(&img, &data.images[f])?;
        }
        println!("{stage}: held-out PSNR {:.2} dB over {} frames", total / held.len() as f64, held.len());
    }
    Ok(())
}
