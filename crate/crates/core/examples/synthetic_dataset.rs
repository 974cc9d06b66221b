//! Generates the seeded deforming-sphere dataset, reloads it through the
//! validator and prints a short summary.
//!
//!     cargo run --release --example synthetic_dataset -- /tmp/synth

use std::path::PathBuf;

use talkfield::dataset::{generate_synthetic, load_dataset, normalize_scene, SyntheticSceneSpec};

fn main() -> talkfield::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic_scene".into()));
    let spec = SyntheticSceneSpec::default();
    let signals = generate_synthetic(&spec, &out)?;
    let manifest = normalize_scene(&load_dataset(&out)?)?;
    println!("wrote {} frames of {}x{} to {}", manifest.frame_count(), manifest.width, manifest.height, out.display());
    println!("scene transform scale {:?} offset {:?}", manifest.transform.scale, manifest.transform.offset);
    let blinks = signals.openness.iter().filter(|&&o| o < 0.5).count();
    println!("frames with closed-ish eyes: {blinks}");
    let lip = manifest.frames[0].landmarks.point(49);
    println!("frame 0 upper lip (normalized): {lip:?}");
    Ok(())
}
