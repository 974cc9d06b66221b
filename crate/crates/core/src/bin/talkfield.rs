//! Thin command-line front end over `talkfield::app`.
//!
//! Exit codes: 0 success, 1 validation error (bad arguments, config, dataset
//! or checkpoint), 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use talkfield::app;
use talkfield::dataset::SyntheticSceneSpec;
use talkfield::field::Ablation;
use talkfield::train::{Stage, TrainConfig};

#[derive(Parser)]
#[command(name = "talkfield", version, about = "Audio-driven talking-portrait radiance field")]
struct Cli {
    /// `key = value` config file; every training option is addressable.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Coarse,
    Fine,
}

#[derive(Subcommand)]
enum Command {
    /// Write the seeded synthetic deforming-sphere dataset.
    Synth {
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        /// Square image side in pixels; focal length scales with it.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        mouth_amplitude: Option<f64>,
        #[arg(long)]
        blink_depth: Option<f64>,
    },
    /// Fit the audio-to-landmark and blink networks; starts a run directory.
    TrainMotion {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoints and curves.
        #[arg(long)]
        run: PathBuf,
    },
    /// Fit the radiance field (coarse first, then fine).
    TrainField {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
    },
    /// Render one frame per audio feature row.
    Render {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        /// AU45 track; defaults to the dataset's when lengths match.
        #[arg(long)]
        au: Option<PathBuf>,
        /// Directory for the PNG frames and predicted landmarks.
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the latest fine (else coarse) checkpoint of the run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Zero the field's audio residual path.
        #[arg(long)]
        no_audio_residual: bool,
        /// Zero the blink embedding everywhere.
        #[arg(long)]
        no_blink: bool,
    },
    /// Score renders (or the held-out frames) into eval.json and eval.csv.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory of rendered PNGs plus landmarks.csv to score.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Ground truth laid out like `--pred`; defaults to the dataset.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> talkfield::Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> talkfield::Result<()> {
    let cfg = config(&cli)?;
    match cli.command {
        Command::Synth {
            out,
            frames,
            size,
            mouth_amplitude,
            blink_depth,
        } => {
            let mut spec = SyntheticSceneSpec {
                seed: cfg.seed,
                ..SyntheticSceneSpec::default()
            };
            spec.frame_count = frames.unwrap_or(spec.frame_count);
            if let Some(s) = size {
                spec.width = s;
                spec.height = s;
                spec.focal *= s as f64 / 64.0;
            }
            spec.mouth_amplitude = mouth_amplitude.unwrap_or(spec.mouth_amplitude);
            spec.blink_depth = blink_depth.unwrap_or(spec.blink_depth);
            app::synth(&spec, &out)?;
            println!("wrote {} frames to {}", spec.frame_count, out.display());
        }
        Command::TrainMotion { data, run } => {
            let o = app::train_motion_run(&data, &run, &cfg)?;
            let last = o.curve.last().map_or(f64::NAN, |s| s.loss);
            println!("motion: {} iterations, final loss {last:.6}, {}", o.curve.len(), o.checkpoint.display());
        }
        Command::TrainField { run, stage } => {
            let stage = match stage {
                StageArg::Coarse => Stage::Coarse,
                StageArg::Fine => Stage::Fine,
            };
            let o = app::train_field_run(&run, stage, &cfg)?;
            let last = o.curve.last().map_or(f64::NAN, |s| s.loss);
            println!("{stage}: {} iterations, final loss {last:.6}, {}", o.curve.len(), o.checkpoint.display());
        }
        Command::Render {
            run,
            audio,
            au,
            out,
            checkpoint,
            no_audio_residual,
            no_blink,
        } => {
            let ablation = Ablation {
                audio_residual: !no_audio_residual,
                blink: !no_blink,
            };
            let files = app::render_run(&run, &audio, au.as_deref(), &out, checkpoint.as_deref(), ablation, &cfg)?;
            println!("rendered {} frames to {}", files.len(), out.display());
        }
        Command::Eval {
            run,
            out,
            pred,
            gt,
            checkpoint,
        } => {
            let r = app::eval_run(&run, pred.as_deref(), gt.as_deref(), &out, checkpoint.as_deref(), &cfg)?;
            println!("{} frames: mean PSNR {} dB, mean LMD {:.6}", r.frame_count, r.mean_psnr, r.mean_lmd);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
