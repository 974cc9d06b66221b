//! Motion training (positional loss + VAE objective + blink supervision),
//! then the two-stage field schedule: whole-frame ray batches, followed by
//! mouth patches scored with squared error plus a weighted perceptual term.

mod config;
mod field;
mod losses;
mod motion;
mod perceptual;
mod run;

pub use config::{parse_config_text, TrainConfig};
pub use losses::{coarse_loss, fine_loss, mouth_region, sample_patch, FineLoss};
pub use perceptual::{FeatureMap, PerceptualMetric};
pub use motion::{eye_targets, init_model, train_motion, MotionData, MotionOutcome, MotionStep, MOTION_CURVE_HEADER};
pub use run::{CheckpointMeta, RunDir, Stage};
pub use field::{train_field, FieldData, FieldOutcome, FieldStep, COARSE_CURVE_HEADER, FINE_CURVE_HEADER};
