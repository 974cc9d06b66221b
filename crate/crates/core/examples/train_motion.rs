//! Fits the audio-to-landmark model (VAE + DLT + blink networks) on a
//! dataset directory and prints the loss curve at a few checkpoints.
//!
//!     cargo run --release --example synthetic_dataset -- /tmp/synth
//!     cargo run --release --example train_motion -- /tmp/synth /tmp/run motion.iters=600

use std::path::PathBuf;

use talkfield::dataset::{load_dataset, normalize_scene};
use talkfield::nn::ParamStore;
use talkfield::train::{init_model, train_motion, MotionData, RunDir, TrainConfig};

fn main() -> talkfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let data_dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_scene".into()));
    let run_dir = PathBuf::from(args.next().unwrap_or_else(|| "run".into()));
    let mut cfg = TrainConfig::default();
    for kv in args {
        let (k, v) = kv.split_once('=').expect("overrides look like motion.iters=600");
        cfg.set(k.trim(), v.trim())?;
    }

    let manifest = normalize_scene(&load_dataset(&data_dir)?)?;
    let data = MotionData::from_manifest(&manifest)?;
    let mut store = ParamStore::new();
    let model = init_model(&mut store, &data, &cfg)?;
    let run = RunDir::create(&run_dir)?;
    let started = std::time::Instant::now();
    let out = train_motion(&model, &mut store, &data, &cfg, &run)?;
    let stride = (out.curve.len() / 10).max(1);
    for s in out.curve.iter().step_by(stride).chain(out.curve.last()) {
        println!(
            "iter {:5}  loss {:.5}  positional {:.5}  vae {:.5}  blink {:.5}",
            s.iteration, s.loss, s.positional, s.vae, s.blink
        );
    }
    println!("{:.1}s, checkpoint {}", started.elapsed().as_secs_f64(), out.checkpoint.display());
    Ok(())
}
