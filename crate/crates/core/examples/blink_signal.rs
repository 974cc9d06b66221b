//! Eye aspect ratio from tracked landmarks against the AU45 track of a
//! synthetic scene: EAR falls when the blink intensity rises.
//!
//!     cargo run --release --example blink_signal -- /tmp/synth

use std::path::PathBuf;

use talkfield::blink::{mean_eye_aspect_ratio, openness_from_ear};
use talkfield::dataset::{generate_synthetic, load_dataset, SyntheticSceneSpec};
use talkfield::metrics::pearson;

fn main() -> talkfield::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic_scene".into()));
    if !dir.join("manifest.json").exists() {
        generate_synthetic(&SyntheticSceneSpec::default(), &dir)?;
    }
    let m = load_dataset(&dir)?;
    let ears = m
        .frames
        .iter()
        .map(|f| mean_eye_aspect_ratio(&f.landmarks))
        .collect::<talkfield::Result<Vec<f64>>>()?;
    let openness = openness_from_ear(&ears)?;
    let au: Vec<f64> = m.au_values().iter().map(|&a| a as f64).collect();
    for (i, (e, o)) in ears.iter().zip(&openness).enumerate().step_by(5) {
        println!("frame {i:3}  EAR {e:.3}  openness {o:.2}  AU45 {:.2}", au[i]);
    }
    println!("pearson(EAR, AU45) = {:.3}", pearson(&ears, &au)?);
    Ok(())
}
