use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every knob of motion and field training. Each field is addressable from
/// a config file by the dotted key listed in [`TrainConfig::KEYS`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,

    pub motion_iters: usize,
    pub motion_lr: f64,
    pub motion_batch: usize,
    pub filter_half_width: usize,
    /// Feed VAE latents (rather than smoothed raw features) to the DLT.
    pub latent_input: bool,
    pub blink_weight: f64,
    pub vae_weight: f64,

    pub coarse_iters: usize,
    pub fine_iters: usize,
    pub rays_per_batch: usize,
    pub frames_per_batch: usize,
    pub train_samples: usize,
    pub render_samples: usize,
    pub lr: f64,
    pub embedding_lr: f64,
    /// Multiplies both learning rates during the fine stage.
    pub fine_lr_scale: f64,
    pub patch_size: usize,
    pub lambda: f64,
    pub mouth_dilation: usize,
    pub checkpoint_every: usize,
    /// Every n-th frame is held out of field training; 0 holds out none.
    pub holdout_every: usize,
    pub jitter: bool,
    pub perceptual_seed: u64,
    /// Report LMD in image pixels (landmarks projected through each frame's
    /// camera) instead of scene units.
    #[serde(default)]
    pub lmd_pixels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            motion_iters: 4000,
            motion_lr: 3e-4,
            motion_batch: 16,
            filter_half_width: 2,
            latent_input: true,
            blink_weight: 1.0,
            vae_weight: 1.0,
            coarse_iters: 20_000,
            fine_iters: 5_000,
            rays_per_batch: 4096,
            frames_per_batch: 4,
            train_samples: 64,
            render_samples: 128,
            lr: 1e-3,
            embedding_lr: 1e-2,
            fine_lr_scale: 0.1,
            patch_size: 32,
            lambda: 0.001,
            mouth_dilation: 8,
            checkpoint_every: 1000,
            holdout_every: 6,
            jitter: true,
            perceptual_seed: 0,
            lmd_pixels: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 25] = [
        "seed",
        "motion.iters",
        "motion.lr",
        "motion.batch",
        "motion.filter_half_width",
        "motion.latent_input",
        "motion.blink_weight",
        "motion.vae_weight",
        "train.coarse_iters",
        "train.fine_iters",
        "train.rays_per_batch",
        "train.frames_per_batch",
        "train.samples",
        "render.samples",
        "train.lr",
        "train.embedding_lr",
        "train.fine.lr_scale",
        "train.fine.patch_size",
        "train.fine.lambda",
        "train.fine.mouth_dilation",
        "train.checkpoint_every",
        "train.holdout_every",
        "train.jitter",
        "train.fine.perceptual_seed",
        "eval.lmd_pixels",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "motion.iters" => self.motion_iters = parse(key, value)?,
            "motion.lr" => self.motion_lr = parse(key, value)?,
            "motion.batch" => self.motion_batch = parse(key, value)?,
            "motion.filter_half_width" => self.filter_half_width = parse(key, value)?,
            "motion.latent_input" => self.latent_input = parse(key, value)?,
            "motion.blink_weight" => self.blink_weight = parse(key, value)?,
            "motion.vae_weight" => self.vae_weight = parse(key, value)?,
            "train.coarse_iters" => self.coarse_iters = parse(key, value)?,
            "train.fine_iters" => self.fine_iters = parse(key, value)?,
            "train.rays_per_batch" => self.rays_per_batch = parse(key, value)?,
            "train.frames_per_batch" => self.frames_per_batch = parse(key, value)?,
            "train.samples" => self.train_samples = parse(key, value)?,
            "render.samples" => self.render_samples = parse(key, value)?,
            "train.lr" => self.lr = parse(key, value)?,
            "train.embedding_lr" => self.embedding_lr = parse(key, value)?,
            "train.fine.lr_scale" => self.fine_lr_scale = parse(key, value)?,
            "train.fine.patch_size" => self.patch_size = parse(key, value)?,
            "train.fine.lambda" => self.lambda = parse(key, value)?,
            "train.fine.mouth_dilation" => self.mouth_dilation = parse(key, value)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "train.holdout_every" => self.holdout_every = parse(key, value)?,
            "train.jitter" => self.jitter = parse(key, value)?,
            "train.fine.perceptual_seed" => self.perceptual_seed = parse(key, value)?,
            "eval.lmd_pixels" => self.lmd_pixels = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn is_holdout(&self, frame: usize) -> bool {
        self.holdout_every > 0 && frame.is_multiple_of(self.holdout_every)
    }

    /// Frames used for fitting, in order.
    pub fn training_frames(&self, count: usize) -> Vec<usize> {
        (0..count).filter(|&f| !self.is_holdout(f)).collect()
    }

    pub fn holdout_frames(&self, count: usize) -> Vec<usize> {
        (0..count).filter(|&f| self.is_holdout(f)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda >= 0.0) {
            return bad("train.fine.lambda must be >= 0");
        }
        if self.patch_size == 0 || self.rays_per_batch == 0 || self.frames_per_batch == 0 || self.motion_batch == 0 {
            return bad("patch size, batch sizes and frames per batch must be positive");
        }
        if self.train_samples < 2 || self.render_samples < 2 {
            return bad("sample counts must be at least 2");
        }
        if !(self.lr > 0.0 && self.embedding_lr > 0.0 && self.motion_lr > 0.0 && self.fine_lr_scale > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.blink_weight >= 0.0 && self.vae_weight >= 0.0) {
            return bad("loss weights must be >= 0");
        }
        if self.holdout_every == 1 {
            return bad("train.holdout_every = 1 would hold out every frame");
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value, line) in parse_config_text(text)? {
            self.set(&key, &value)
                .map_err(|e| Error::Config(format!("line {line}: {}", e.to_string().trim_start_matches("config error: "))))?;
        }
        self.validate()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Serializes every field in the config grammar.
    pub fn to_text(&self) -> String {
        let v = [
            self.seed.to_string(),
            self.motion_iters.to_string(),
            self.motion_lr.to_string(),
            self.motion_batch.to_string(),
            self.filter_half_width.to_string(),
            self.latent_input.to_string(),
            self.blink_weight.to_string(),
            self.vae_weight.to_string(),
            self.coarse_iters.to_string(),
            self.fine_iters.to_string(),
            self.rays_per_batch.to_string(),
            self.frames_per_batch.to_string(),
            self.train_samples.to_string(),
            self.render_samples.to_string(),
            self.lr.to_string(),
            self.embedding_lr.to_string(),
            self.fine_lr_scale.to_string(),
            self.patch_size.to_string(),
            self.lambda.to_string(),
            self.mouth_dilation.to_string(),
            self.checkpoint_every.to_string(),
            self.holdout_every.to_string(),
            self.jitter.to_string(),
            self.perceptual_seed.to_string(),
            self.lmd_pixels.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(v)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// `key = value` lines; `#` starts a comment; blank lines ignored. Returns
/// `(key, value, line number)`. Keys may repeat; the last one wins when
/// applied in order.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        let valid_key = !k.is_empty()
            && k.split('.')
                .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
        if !valid_key || v.is_empty() {
            return Err(Error::Config(format!("line {}: malformed entry {line:?}", i + 1)));
        }
        out.push((k.to_string(), v.to_string(), i + 1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_stated_lambda() {
        assert_eq!(TrainConfig::default().lambda, 0.001);
    }

    #[test]
    fn dotted_keys_comments_and_blank_lines() {
        let mut c = TrainConfig::default();
        c.apply_text("# schedule\n\ntrain.fine.lambda = 0.5  # heavier\nseed=9\nmotion.latent_input = false\n")
            .unwrap();
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.seed, 9);
        assert!(!c.latent_input);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected_with_line_numbers() {
        let mut c = TrainConfig::default();
        let e = c.apply_text("seed = 1\ntrain.bogus = 3\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("train.bogus"), "{e}");
        assert!(TrainConfig::default().apply_text("train.lr = fast").is_err());
        assert!(TrainConfig::default().apply_text("train.lr 3").is_err());
        assert!(TrainConfig::default().apply_text("train.fine.lambda = -1").is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let mut c = TrainConfig::default();
        c.seed = 77;
        c.lambda = 0.25;
        c.jitter = false;
        let mut back = TrainConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }
}
