//! Drives a trained run from its audio track: renders frames, scores the
//! held-out ones, and repeats with the audio residual and the blink path
//! switched off.
//!
//!     cargo run --release --example train_motion -- /tmp/synth /tmp/run
//!     cargo run --release --example train_field -- /tmp/synth /tmp/run
//!     cargo run --release --example render_and_eval -- /tmp/run /tmp/frames

use std::path::PathBuf;

use talkfield::app::{eval_run, load_trained, render_run};
use talkfield::field::Ablation;
use talkfield::metrics::psnr;
use talkfield::train::{mouth_region, TrainConfig};

fn main() -> talkfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = PathBuf::from(args.next().unwrap_or_else(|| "run".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "frames".into()));
    let mut cfg = TrainConfig::default();
    cfg.set("render.samples", "64")?;

    let trained = load_trained(&run, None, cfg.seed)?;
    let audio = run.join("audio_features.csv");
    let audio = if audio.exists() { audio } else { trained.manifest.root.join("audio_features.csv") };
    let written = render_run(&run, &audio, None, &out, None, Ablation::default(), &cfg)?;
    println!("rendered {} frames into {}", written.len(), out.display());

    let report = eval_run(&run, None, None, &out.join("eval"), None, &cfg)?;
    println!("held-out PSNR {} over {} frames, LMD {:.4}", report.mean_psnr, report.frame_count, report.mean_lmd);

    let held = cfg.holdout_frames(trained.manifest.frame_count());
    let (audio_t, au) = (trained.manifest.audio_frames(), trained.manifest.au_values());
    for (name, ablation) in [
        ("full", Ablation::default()),
        ("no audio residual", Ablation { audio_residual: false, ..Ablation::default() }),
        ("no blink", Ablation { blink: false, ..Ablation::default() }),
    ] {
        let (_, images) = trained.infer(&audio_t, &au, ablation, Some(&held), &cfg)?;
        let mut total = 0.0;
        for (f, img) in &images {
            let frame = &trained.manifest.frames[*f];
            let rect = mouth_region(&frame.landmarks, &frame.camera, 2)?;
            total += psnr(&img.crop(&rect)?, &trained.manifest.load_image(*f)?.crop(&rect)?)?;
        }
        println!("{name:18} mouth PSNR {:.2} dB", total / images.len() as f64);
    }
    Ok(())
}
