//! Renders an analytic soft sphere with the stratified ray marcher, writes
//! a PNG and shows the first-order convergence of the midpoint quadrature
//! against the closed form for a constant-density ray.
//!
//!     cargo run --release --example volume_rendering -- sphere.png

use std::path::PathBuf;

use talkfield::field::FieldOutput;
use talkfield::render::{composite, render_image, segment_lengths, Camera, PointField, RenderSettings};

fn main() -> talkfield::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "sphere.png".into()));

    let cam = Camera::look_at([0.5, 0.9, 2.2], [0.5, 0.5, 0.5], [0.0, 1.0, 0.0], 90.0, 96, 96)?;
    let sphere = PointField(|p: [f64; 3], _d: [f64; 3]| {
        let r = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) + (p[2] - 0.5).powi(2)).sqrt();
        let sigma = if r < 0.3 { 40.0 * (1.0 - r / 0.3) } else { 0.0 };
        Ok(FieldOutput { color: [p[0] as f32, 0.4, 1.0 - p[1] as f32], sigma: sigma as f32 })
    });
    let settings = RenderSettings { samples: 96, background: [1.0; 3], ..RenderSettings::default() };
    render_image(&cam, &sphere, &settings)?.save_png(&out)?;
    println!("wrote {}", out.display());

    // constant sigma = 2, red, over a unit segment: C = 1 - exp(-2)
    let exact = 1.0 - (-2.0f64).exp();
    let mut prev: Option<f64> = None;
    for n in [16, 32, 64, 128, 256, 512, 1024] {
        let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let outs = vec![FieldOutput { color: [1.0, 0.0, 0.0], sigma: 2.0 }; n];
        let c = composite(&outs, &segment_lengths(&t, 1.0), [0.0; 3])?;
        let err = (c.rgb[0] - exact).abs();
        let ratio = prev.map(|p| format!("  ratio {:.3}", p / err)).unwrap_or_default();
        println!("n = {n:5}  |err| = {err:.3e}{ratio}");
        prev = Some(err);
    }
    Ok(())
}
