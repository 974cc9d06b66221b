//! Eye geometry and blink conditioning: AU45 intensities and per-frame audio
//! map to a small blink embedding; eye aspect ratios from the 68-point
//! layout give the openness supervision; a history model predicts the next
//! frame's eye state.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{csv_error, AudioFeatureFrame, LandmarkSet};
use crate::nn::{Gradients, Mlp, MlpTrace, OutputActivation, ParamStore};
use crate::real::Real;

pub const LEFT_EYE: Range<usize> = 36..42;
pub const RIGHT_EYE: Range<usize> = 42..48;
pub const AU_MAX: f32 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlinkState {
    pub frame: usize,
    /// AU45 intensity in `[0, 5]`.
    pub au_intensity: f32,
    /// 1 is fully open.
    pub eye_openness: f32,
}

impl BlinkState {
    pub fn new(frame: usize, au_intensity: f32, eye_openness: f32) -> Result<Self> {
        if !(0.0..=AU_MAX).contains(&au_intensity) {
            return Err(Error::Domain(format!("AU intensity {au_intensity} outside [0, 5] at frame {frame}")));
        }
        if !(0.0..=1.0).contains(&eye_openness) {
            return Err(Error::Domain(format!("eye openness {eye_openness} outside [0, 1] at frame {frame}")));
        }
        Ok(BlinkState {
            frame,
            au_intensity,
            eye_openness,
        })
    }
}

pub type Eye = [[f32; 3]; 6];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EyeLandmarks {
    pub frame: usize,
    pub left: Eye,
    pub right: Eye,
}

pub fn extract_eye_landmarks(lm: &LandmarkSet) -> EyeLandmarks {
    let pick = |r: Range<usize>| {
        let mut eye = [[0.0; 3]; 6];
        eye.iter_mut().zip(&lm.points()[r]).for_each(|(e, p)| *e = *p);
        eye
    };
    EyeLandmarks {
        frame: lm.frame(),
        left: pick(LEFT_EYE),
        right: pick(RIGHT_EYE),
    }
}

fn distance(a: [f32; 3], b: [f32; 3]) -> f64 {
    (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum::<f64>().sqrt()
}

/// `(|p2 - p6| + |p3 - p5|) / (2 |p1 - p4|)` with points numbered 1..6.
pub fn eye_aspect_ratio(eye: &Eye) -> Result<f64> {
    let width = distance(eye[0], eye[3]);
    if width < 1e-9 {
        return Err(Error::DegenerateEye(width));
    }
    Ok((distance(eye[1], eye[5]) + distance(eye[2], eye[4])) / (2.0 * width))
}

/// Mean EAR of both eyes.
pub fn mean_eye_aspect_ratio(lm: &LandmarkSet) -> Result<f64> {
    let eyes = extract_eye_landmarks(lm);
    Ok(0.5 * (eye_aspect_ratio(&eyes.left)? + eye_aspect_ratio(&eyes.right)?))
}

/// `clamp(EAR / EAR_open, 0, 1)` where `EAR_open` is the 95th percentile
/// (nearest rank) of the sequence.
pub fn openness_from_ear(ears: &[f64]) -> Result<Vec<f32>> {
    if ears.is_empty() {
        return Err(Error::Domain("openness of an empty EAR sequence".into()));
    }
    let mut sorted = ears.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let open = sorted[rank - 1];
    if !(open > 0.0) {
        return Err(Error::Domain("95th percentile EAR is zero; eyes never open".into()));
    }
    Ok(ears.iter().map(|&e| (e / open).clamp(0.0, 1.0) as f32).collect())
}

/// Reads `frame,au45_intensity`; frames must be `0, 1, 2, ...` in order and
/// intensities inside `[0, 5]`.
pub fn read_au_csv(path: &Path) -> Result<Vec<f32>> {
    let file = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(&file, None, e))?;
    let headers = reader.headers().map_err(|e| csv_error(&file, None, e))?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["frame", "au45_intensity"] {
        return Err(Error::dataset(&file, None, "header must be frame,au45_intensity"));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(&file, Some(i), e))?;
        let frame: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::dataset(&file, Some(i), format!("frame {:?} is not an integer", &record[0])))?;
        if frame != i {
            return Err(Error::dataset(&file, Some(i), format!("frame index {frame} out of order")));
        }
        let v: f32 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::dataset(&file, Some(i), format!("intensity {:?} is not a number", &record[1])))?;
        if !(0.0..=AU_MAX).contains(&v) {
            return Err(Error::dataset(&file, Some(i), format!("AU intensity {v} outside range [0, 5]")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::dataset(&file, None, "no rows"));
    }
    Ok(out)
}

pub fn write_au_csv(path: &Path, au: &[f32]) -> Result<()> {
    let file = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(&file, None, e))?;
    w.write_record(["frame", "au45_intensity"])
        .map_err(|e| csv_error(&file, None, e))?;
    for (i, v) in au.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])
            .map_err(|e| csv_error(&file, Some(i), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlinkConfig {
    /// AU frames seen by the mapping network, centered on the current frame.
    pub au_window: usize,
    pub hidden: usize,
    pub embedding_width: usize,
    /// Frames of history for next-state prediction.
    pub history: usize,
}

impl Default for BlinkConfig {
    fn default() -> Self {
        BlinkConfig {
            au_window: 5,
            hidden: 32,
            embedding_width: 4,
            history: 4,
        }
    }
}

/// Width of the per-frame audio summary: mean and root mean square.
pub const AUDIO_SUMMARY: usize = 2;

impl BlinkConfig {
    pub fn mapping_input_width(&self) -> usize {
        self.au_window + AUDIO_SUMMARY
    }

    pub fn predictor_input_width(&self) -> usize {
        self.history * (self.embedding_width + 1)
    }
}

/// `[AU_i / 5 for the window | mean(audio) | rms(audio)]`.
pub fn blink_input<T: Real>(au_window: &[f32], audio: &AudioFeatureFrame, expected_window: usize) -> Result<Vec<T>> {
    if au_window.is_empty() {
        return Err(Error::Domain("empty AU window".into()));
    }
    if au_window.len() != expected_window {
        return Err(Error::shape("AU window", expected_window, au_window.len()));
    }
    if audio.values.is_empty() {
        return Err(Error::Domain("empty audio feature frame".into()));
    }
    let n = audio.values.len() as f64;
    let mean = audio.values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let rms = (audio.values.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n).sqrt();
    Ok(au_window
        .iter()
        .map(|&a| T::lit(a as f64 / AU_MAX as f64))
        .chain([T::lit(mean), T::lit(rms)])
        .collect())
}

/// AU values for the window centered on `frame`, edges repeated.
pub fn au_window(au: &[f32], frame: usize, window: usize) -> Vec<f32> {
    let half = (window / 2) as isize;
    (-half..=half)
        .map(|k| au[(frame as isize + k).clamp(0, au.len() as isize - 1) as usize])
        .collect()
}

/// Mapping network (AU window + audio summary to embedding), a sigmoid
/// openness readout of the embedding, and the next-state predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct BlinkModel {
    config: BlinkConfig,
    mapping: Mlp,
    readout: Mlp,
    predictor: Mlp,
}

impl BlinkModel {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: BlinkConfig, rng: &mut R) -> Result<Self> {
        if config.au_window.is_multiple_of(2) || config.history == 0 {
            return Err(Error::Config(format!(
                "blink au_window must be odd and history positive, got {} and {}",
                config.au_window, config.history
            )));
        }
        let e = config.embedding_width;
        let mapping = Mlp::new(
            store,
            "blink.map",
            &[config.mapping_input_width(), config.hidden, e],
            OutputActivation::Identity,
            rng,
        )?;
        let readout = Mlp::new(store, "blink.readout", &[e, 1], OutputActivation::Sigmoid, rng)?;
        let predictor = Mlp::new(
            store,
            "blink.next",
            &[config.predictor_input_width(), config.hidden, 1],
            OutputActivation::Sigmoid,
            rng,
        )?;
        Ok(BlinkModel {
            config,
            mapping,
            readout,
            predictor,
        })
    }

    pub fn config(&self) -> &BlinkConfig {
        &self.config
    }

    pub fn mapping(&self) -> &Mlp {
        &self.mapping
    }

    pub fn readout(&self) -> &Mlp {
        &self.readout
    }

    pub fn predictor(&self) -> &Mlp {
        &self.predictor
    }

    /// Blink embedding for one frame.
    pub fn au_to_blink_feature<T: Real>(
        &self,
        store: &ParamStore<T>,
        au_window: &[f32],
        audio: &AudioFeatureFrame,
    ) -> Result<Vec<T>> {
        let input = blink_input(au_window, audio, self.config.au_window)?;
        self.mapping.forward(store, &input)
    }

    /// Embeddings for every frame of a sequence, `frames x D_b`.
    pub fn embed_sequence<T: Real>(&self, store: &ParamStore<T>, au: &[f32], audio: &[AudioFeatureFrame]) -> Result<Vec<T>> {
        if au.len() != audio.len() {
            return Err(Error::shape("AU frames vs audio frames", audio.len(), au.len()));
        }
        let mut out = Vec::with_capacity(au.len() * self.config.embedding_width);
        for (f, a) in audio.iter().enumerate() {
            out.extend(self.au_to_blink_feature(store, &au_window(au, f, self.config.au_window), a)?);
        }
        Ok(out)
    }

    pub fn openness<T: Real>(&self, store: &ParamStore<T>, embedding: &[T]) -> Result<T> {
        Ok(self.readout.forward(store, embedding)?[0])
    }

    /// Next-frame openness from the last `K` embeddings and EAR values.
    pub fn predict_next_eye_state<T: Real>(&self, store: &ParamStore<T>, embeddings: &[Vec<T>], ears: &[T]) -> Result<T> {
        let k = self.config.history;
        if embeddings.len() < k || ears.len() < k {
            return Err(Error::State(format!(
                "eye-state history has {} embeddings and {} EAR values, need {k}",
                embeddings.len(),
                ears.len()
            )));
        }
        let input = predictor_input(&embeddings[embeddings.len() - k..], &ears[ears.len() - k..], self.config.embedding_width)?;
        Ok(self.predictor.forward(store, &input)?[0])
    }
}

/// Flattens `K` history steps as `[e_1 | ear_1 | ... | e_K | ear_K]`.
pub fn predictor_input<T: Real>(embeddings: &[Vec<T>], ears: &[T], width: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(embeddings.len() * (width + 1));
    for (e, &r) in embeddings.iter().zip(ears) {
        if e.len() != width {
            return Err(Error::shape("blink embedding", width, e.len()));
        }
        out.extend_from_slice(e);
        out.push(r);
    }
    Ok(out)
}

/// Retained activations for one batched mapping + readout pass.
#[derive(Clone, Debug, Default)]
pub struct BlinkTrace<T> {
    pub mapping: MlpTrace<T>,
    pub readout: MlpTrace<T>,
}

impl BlinkModel {
    /// Embeddings and openness for `batch` mapping inputs.
    pub fn forward_batch<T: Real>(&self, store: &ParamStore<T>, inputs: &[T], batch: usize, trace: &mut BlinkTrace<T>) -> Result<()> {
        let emb = self.mapping.forward_batch(store, inputs, batch, &mut trace.mapping)?.to_vec();
        self.readout.forward_batch(store, &emb, batch, &mut trace.readout)?;
        Ok(())
    }

    /// `d_openness` is per row; `d_embedding` (optional, `batch x D_b`) adds
    /// gradient arriving at the embedding from other consumers.
    pub fn backward_batch<T: Real>(
        &self,
        store: &ParamStore<T>,
        trace: &BlinkTrace<T>,
        d_openness: &[T],
        d_embedding: Option<&[T]>,
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        let batch = trace.mapping.batch();
        let mut d_emb = vec![T::zero(); batch * self.config.embedding_width];
        self.readout
            .backward_batch(store, &trace.readout, d_openness, grads, Some(&mut d_emb))?;
        if let Some(extra) = d_embedding {
            if extra.len() != d_emb.len() {
                return Err(Error::shape("blink embedding gradient", d_emb.len(), extra.len()));
            }
            d_emb.iter_mut().zip(extra).for_each(|(a, &b)| *a += b);
        }
        self.mapping.backward_batch(store, &trace.mapping, &d_emb, grads, None)
    }
}
