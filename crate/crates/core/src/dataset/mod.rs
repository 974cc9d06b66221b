//! On-disk talking-portrait datasets: validation, scene normalization and a
//! deterministic synthetic generator.

mod manifest;
mod synthetic;

pub use manifest::{
    frame_file_name, load_dataset, normalize_scene, CameraRecord, DatasetManifest, FrameRecord, ManifestFile, SceneBounds,
    SceneTransform,
};
pub use synthetic::{generate_synthetic, synthetic_camera, synthetic_landmarks, synthetic_signals, SyntheticSceneSpec, SyntheticSignals};
