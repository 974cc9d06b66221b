//! The assembled talking head: audio features to landmarks (VAE + DLT), AU
//! intensities to blink embeddings, and the conditioned radiance field that
//! renders frames from them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blink::{BlinkConfig, BlinkModel};
use crate::error::{Error, Result};
use crate::field::{Ablation, ConditionTrace, FieldConfig, FieldOutput, FieldWorkspace, RadianceField};
use crate::motion::{
    gather_window, sequence_width, temporal_filter, AudioFeatureFrame, Dlt, DltConfig, DltTrace, LandmarkSet, Vae,
    VaeConfig,
};
use crate::nn::{ParamGroup, ParamStore};
use crate::render::{render_image, Camera, FieldQuery, Image, RenderSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vae: VaeConfig,
    pub dlt: DltConfig,
    pub blink: BlinkConfig,
    pub field: FieldConfig,
    pub filter_half_width: usize,
    /// DLT reads VAE latents when set, smoothed raw features otherwise.
    pub latent_input: bool,
}

impl ModelConfig {
    pub fn new(audio_width: usize, filter_half_width: usize, latent_input: bool) -> Self {
        let vae = VaeConfig {
            input_width: audio_width,
            ..VaeConfig::default()
        };
        let blink = BlinkConfig::default();
        let dlt = DltConfig {
            input_width: if latent_input { vae.latent_width } else { audio_width },
            blink_width: blink.embedding_width,
            ..DltConfig::default()
        };
        let mut field = FieldConfig::default();
        field.condition.audio_latent_width = vae.latent_width;
        field.condition.blink_width = blink.embedding_width;
        ModelConfig {
            vae,
            dlt,
            blink,
            field,
            filter_half_width,
            latent_input,
        }
    }
}

/// Which arrays a training stage updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Motion,
    Field,
    Everything,
}

const MOTION_PREFIXES: [&str; 3] = ["vae.", "dlt.", "blink."];
const FROZEN_ALWAYS: [&str; 2] = ["cond.lm.mean", "cond.lm.scale"];

/// Per-frame signals derived from audio and AU tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionInputs {
    pub frames: usize,
    /// `frames x D_a`, temporally smoothed.
    pub smoothed: Vec<f32>,
    /// Posterior means, `frames x D_z`.
    pub latents: Vec<f32>,
    /// `frames x D_b`.
    pub blink: Vec<f32>,
}

impl MotionInputs {
    /// Per-frame DLT inputs as configured.
    pub fn dlt_inputs<'a>(&'a self, config: &ModelConfig) -> &'a [f32] {
        if config.latent_input {
            &self.latents
        } else {
            &self.smoothed
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TalkingHead {
    pub config: ModelConfig,
    pub vae: Vae,
    pub dlt: Dlt,
    pub blink: BlinkModel,
    pub field: RadianceField,
}

impl TalkingHead {
    /// Registers every array in `store` in a fixed order, seeded.
    pub fn new(store: &mut ParamStore<f32>, config: ModelConfig, mean_landmarks: Option<&LandmarkSet>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vae = Vae::new(store, config.vae.clone(), &mut rng)?;
        let dlt = Dlt::new(store, config.dlt.clone(), mean_landmarks, &mut rng)?;
        let blink = BlinkModel::new(store, config.blink.clone(), &mut rng)?;
        let field = RadianceField::new(store, config.field, &mut rng)?;
        Ok(TalkingHead {
            config,
            vae,
            dlt,
            blink,
            field,
        })
    }

    /// Sets parameter groups so Adam only updates the chosen stage. Hash
    /// tables use the embedding learning rate.
    pub fn set_trainable(&self, store: &mut ParamStore<f32>, which: Trainable) {
        let ids: Vec<_> = store.params().map(|(id, p)| (id, p.name().to_string())).collect();
        for (id, name) in ids {
            let motion = MOTION_PREFIXES.iter().any(|p| name.starts_with(p));
            let on = match which {
                Trainable::Motion => motion,
                Trainable::Field => !motion,
                Trainable::Everything => true,
            };
            let group = if !on || FROZEN_ALWAYS.contains(&name.as_str()) {
                ParamGroup::Frozen
            } else if name.starts_with("plane_") {
                ParamGroup::Embedding
            } else {
                ParamGroup::Network
            };
            store.set_group(id, group);
        }
    }

    pub fn motion_inputs(&self, store: &ParamStore<f32>, audio: &[AudioFeatureFrame], au: &[f32]) -> Result<MotionInputs> {
        let width = sequence_width(audio)?;
        if width != self.config.vae.input_width {
            return Err(Error::shape("audio feature width", self.config.vae.input_width, width));
        }
        if au.len() != audio.len() {
            return Err(Error::shape("AU frames vs audio frames", audio.len(), au.len()));
        }
        let smoothed_frames = temporal_filter(audio, self.config.filter_half_width)?;
        let smoothed: Vec<f32> = smoothed_frames.iter().flat_map(|f| f.values.iter().copied()).collect();
        let latents = self.vae.encode_means(store, &smoothed, audio.len())?;
        let blink = self.blink.embed_sequence(store, au, &smoothed_frames)?;
        Ok(MotionInputs {
            frames: audio.len(),
            smoothed,
            latents,
            blink,
        })
    }

    /// DLT landmarks for every frame. A disabled blink path feeds zeros.
    pub fn predict_landmarks(&self, store: &ParamStore<f32>, inputs: &MotionInputs, ablation: Ablation) -> Result<Vec<LandmarkSet>> {
        let x = inputs.dlt_inputs(&self.config);
        let d = self.config.dlt.input_width;
        let w = self.config.dlt.window;
        let db = self.config.blink.embedding_width;
        let mut trace = DltTrace::new();
        let mut out = Vec::with_capacity(inputs.frames);
        for f in 0..inputs.frames {
            let window = gather_window(x, d, f, w);
            let blink = if ablation.blink {
                inputs.blink[f * db..(f + 1) * db].to_vec()
            } else {
                vec![0.0; db]
            };
            let flat = self.dlt.forward_batch(store, &window, &blink, 1, &mut trace)?;
            out.push(LandmarkSet::from_flat(f, flat)?);
        }
        Ok(out)
    }

    /// Fused field condition for one frame.
    pub fn condition(
        &self,
        store: &ParamStore<f32>,
        landmarks: &LandmarkSet,
        inputs: &MotionInputs,
        frame: usize,
        ablation: Ablation,
    ) -> Result<Vec<f32>> {
        let zw = self.config.vae.latent_width;
        let db = self.config.blink.embedding_width;
        let mut trace = ConditionTrace::new();
        Ok(self
            .field
            .condition()
            .encode(
                store,
                landmarks,
                &inputs.latents[frame * zw..(frame + 1) * zw],
                &inputs.blink[frame * db..(frame + 1) * db],
                ablation,
                &mut trace,
            )?
            .fused())
    }

    pub fn render(&self, store: &ParamStore<f32>, cam: &Camera, cond: &[f32], settings: &RenderSettings) -> Result<Image> {
        render_image(cam, &self.conditioned(store, cond), settings)
    }

    pub fn conditioned<'a>(&'a self, store: &'a ParamStore<f32>, cond: &'a [f32]) -> ConditionedField<'a> {
        ConditionedField {
            field: &self.field,
            store,
            cond,
        }
    }
}

/// A field with its condition fixed, queryable by the renderer.
pub struct ConditionedField<'a> {
    pub field: &'a RadianceField,
    pub store: &'a ParamStore<f32>,
    pub cond: &'a [f32],
}

impl FieldQuery for ConditionedField<'_> {
    fn eval_ray(&self, positions: &[[f64; 3]], direction: [f64; 3]) -> Result<Vec<FieldOutput<f32>>> {
        let pos: Vec<[f32; 3]> = positions.iter().map(|p| p.map(|c| c as f32)).collect();
        let d = direction.map(|c| c as f32);
        let dirs = vec![d; pos.len()];
        let mut ws = FieldWorkspace::new();
        Ok(self.field.forward_batch(self.store, &pos, &dirs, self.cond, &mut ws)?.to_vec())
    }
}
