//! Audio-driven talking-portrait radiance field.
//!
//! Audio features pass through a VAE and a temporal transformer (DLT) to
//! 68 facial landmarks; an eye-aspect-ratio blink model adds an eye state.
//! Landmarks, an audio residual and the blink embedding condition a
//! radiance field over a triplane hash encoding, which is volume rendered
//! along camera rays. Training runs in three stages: motion, a coarse
//! photometric field stage, then a fine stage that adds a perceptual term
//! on mouth patches.
//!
//! Every model is generic over [`Real`], so gradients can be checked in
//! `f64` against the same code that trains in `f32`.

pub mod app;
pub mod blink;
pub mod dataset;
pub mod error;
pub mod field;
pub mod hash_grid;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod real;
pub mod render;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
