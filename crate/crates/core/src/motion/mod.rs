//! Audio-to-motion path: temporal smoothing of per-frame acoustic features, a
//! variational bottleneck, and the Dynamic Landmark Transformer predicting 68
//! 3D landmarks per frame.

mod audio;
mod dlt;
mod landmarks;
mod loss;
mod vae;

pub(crate) use audio::csv_error;
pub use audio::{read_audio_csv, sequence_width, temporal_filter, write_audio_csv, AudioFeatureFrame};
pub use dlt::{gather_window, Dlt, DltConfig, DltTrace};
pub use landmarks::{read_landmarks_csv, write_landmarks_csv, LandmarkSet, LANDMARK_COUNT, LANDMARK_VALUES, MOUTH_INDICES};
pub use loss::{positional_loss, positional_loss_flat};
pub use vae::{kl_divergence, AudioLatent, Vae, VaeConfig, VaeLoss, VaeTrace};
