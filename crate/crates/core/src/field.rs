//! The conditioned radiance field: triplane features of the position, fused
//! with a per-frame condition vector, decode to density; a second network
//! turns geometry features plus an encoded view direction into color.
//!
//! Density never sees the view direction, so it is view-independent by
//! construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash_grid::{HashGridConfig, TriplaneEncoder};
use crate::motion::{LandmarkSet, LANDMARK_VALUES};
use crate::nn::{softplus, sigmoid, Gradients, Mlp, MlpTrace, OutputActivation, ParamGroup, ParamId, ParamStore};
use crate::real::Real;

pub const SH_WIDTH: usize = 9;

/// Real spherical harmonics up to degree 2 of a unit direction.
pub fn sh_encode<T: Real>(d: [T; 3]) -> [T; SH_WIDTH] {
    let [x, y, z] = d;
    let c0 = T::lit(0.282_094_791_773_878_14);
    let c1 = T::lit(0.488_602_511_902_919_9);
    let c2 = T::lit(1.092_548_430_592_079_2);
    let c3 = T::lit(0.315_391_565_252_520_05);
    let c4 = T::lit(0.546_274_215_296_039_6);
    let three = T::lit(3.0);
    [
        c0,
        -c1 * y,
        c1 * z,
        -c1 * x,
        c2 * x * y,
        -c2 * y * z,
        c3 * (three * z * z - T::one()),
        -c2 * x * z,
        c4 * (x * x - y * y),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput<T = f32> {
    pub color: [T; 3],
    pub sigma: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityActivation {
    Softplus,
    Exp,
}

impl DensityActivation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            DensityActivation::Softplus => softplus(x),
            DensityActivation::Exp => x.exp(),
        }
    }

    fn derivative<T: Real>(self, pre: T, post: T) -> T {
        match self {
            DensityActivation::Softplus => sigmoid(pre),
            DensityActivation::Exp => post,
        }
    }
}

/// Switches for the two conditioning paths; both on for the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub audio_residual: bool,
    pub blink: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            audio_residual: true,
            blink: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    pub code_width: usize,
    pub landmark_hidden: usize,
    pub audio_latent_width: usize,
    pub audio_hidden: usize,
    pub blink_width: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        ConditionConfig {
            code_width: 32,
            landmark_hidden: 64,
            audio_latent_width: 16,
            audio_hidden: 32,
            blink_width: 4,
        }
    }
}

impl ConditionConfig {
    pub fn fused_width(&self) -> usize {
        self.code_width + self.blink_width
    }
}

/// Per-frame conditioning: landmark code, audio residual and blink embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionVector<T = f32> {
    pub landmark_code: Vec<T>,
    pub audio_residual: Vec<T>,
    pub blink_embedding: Vec<T>,
}

impl<T: Real> ConditionVector<T> {
    /// `(landmark_code + audio_residual) ‖ blink_embedding`
    pub fn fused(&self) -> Vec<T> {
        self.landmark_code
            .iter()
            .zip(&self.audio_residual)
            .map(|(&l, &a)| l + a)
            .chain(self.blink_embedding.iter().copied())
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConditionTrace<T> {
    landmark: MlpTrace<T>,
    audio: MlpTrace<T>,
    audio_used: bool,
}

impl<T: Real> ConditionTrace<T> {
    pub fn new() -> Self {
        ConditionTrace {
            landmark: MlpTrace::new(),
            audio: MlpTrace::new(),
            audio_used: false,
        }
    }
}

/// Encoders for the landmark code (`cond.lm`) and the audio residual
/// (`cond.audio`). Landmarks are standardized with frozen per-coordinate
/// statistics before entering the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEncoder {
    config: ConditionConfig,
    landmark_mean: ParamId,
    landmark_scale: ParamId,
    landmark_net: Mlp,
    audio_net: Mlp,
}

impl ConditionEncoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: ConditionConfig, rng: &mut R) -> Result<Self> {
        let landmark_mean = store.add("cond.lm.mean", &[LANDMARK_VALUES], vec![T::lit(0.5); LANDMARK_VALUES], ParamGroup::Frozen)?;
        let landmark_scale = store.add("cond.lm.scale", &[LANDMARK_VALUES], vec![T::one(); LANDMARK_VALUES], ParamGroup::Frozen)?;
        let landmark_net = Mlp::new(
            store,
            "cond.lm",
            &[LANDMARK_VALUES, config.landmark_hidden, config.code_width],
            OutputActivation::Identity,
            rng,
        )?;
        let audio_net = Mlp::new(
            store,
            "cond.audio",
            &[config.audio_latent_width, config.audio_hidden, config.code_width],
            OutputActivation::Identity,
            rng,
        )?;
        Ok(ConditionEncoder {
            config,
            landmark_mean,
            landmark_scale,
            landmark_net,
            audio_net,
        })
    }

    pub fn config(&self) -> &ConditionConfig {
        &self.config
    }

    pub fn audio_net(&self) -> &Mlp {
        &self.audio_net
    }

    pub fn landmark_net(&self) -> &Mlp {
        &self.landmark_net
    }

    /// Sets the frozen standardization so that training landmarks map to
    /// zero mean and unit spread per coordinate (spread floored at `1e-3`).
    pub fn fit_normalization<T: Real>(&self, store: &mut ParamStore<T>, sets: &[LandmarkSet]) -> Result<()> {
        let mean = LandmarkSet::mean(sets)?.flatten();
        let mut var = vec![0f64; LANDMARK_VALUES];
        for s in sets {
            for (v, (x, m)) in var.iter_mut().zip(s.flatten().iter().zip(&mean)) {
                *v += ((x - m) as f64).powi(2);
            }
        }
        let n = sets.len() as f64;
        let scale: Vec<T> = var.iter().map(|v| T::lit(1.0 / (v / n).sqrt().max(1e-3))).collect();
        store.get_mut(self.landmark_mean).iter_mut().zip(&mean).for_each(|(d, &m)| *d = T::lit(m as f64));
        store.get_mut(self.landmark_scale).copy_from_slice(&scale);
        Ok(())
    }

    pub fn encode<T: Real>(
        &self,
        store: &ParamStore<T>,
        landmarks: &LandmarkSet,
        audio_latent: &[T],
        blink: &[T],
        ablation: Ablation,
        trace: &mut ConditionTrace<T>,
    ) -> Result<ConditionVector<T>> {
        if audio_latent.len() != self.config.audio_latent_width {
            return Err(Error::shape("audio latent", self.config.audio_latent_width, audio_latent.len()));
        }
        if blink.len() != self.config.blink_width {
            return Err(Error::shape("blink embedding", self.config.blink_width, blink.len()));
        }
        let mean = store.get(self.landmark_mean);
        let scale = store.get(self.landmark_scale);
        let lm_in: Vec<T> = landmarks
            .flatten()
            .iter()
            .zip(mean.iter().zip(scale))
            .map(|(&x, (&m, &s))| (T::lit(x as f64) - m) * s)
            .collect();
        let landmark_code = self.landmark_net.forward_batch(store, &lm_in, 1, &mut trace.landmark)?.to_vec();
        trace.audio_used = ablation.audio_residual;
        let audio_residual = if ablation.audio_residual {
            self.audio_net.forward_batch(store, audio_latent, 1, &mut trace.audio)?.to_vec()
        } else {
            trace.audio.clear();
            vec![T::zero(); self.config.code_width]
        };
        let blink_embedding = if ablation.blink {
            blink.to_vec()
        } else {
            vec![T::zero(); self.config.blink_width]
        };
        Ok(ConditionVector {
            landmark_code,
            audio_residual,
            blink_embedding,
        })
    }

    /// Back-propagates a gradient on the fused vector into both encoders.
    /// The gradient w.r.t. the audio latent is written to `d_audio_latent`.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        trace: &ConditionTrace<T>,
        d_fused: &[T],
        grads: &mut Gradients<T>,
        d_audio_latent: Option<&mut [T]>,
    ) -> Result<()> {
        if d_fused.len() != self.config.fused_width() {
            return Err(Error::shape("fused condition gradient", self.config.fused_width(), d_fused.len()));
        }
        let d_code = &d_fused[..self.config.code_width];
        self.landmark_net.backward_batch(store, &trace.landmark, d_code, grads, None)?;
        if trace.audio_used {
            self.audio_net.backward_batch(store, &trace.audio, d_code, grads, d_audio_latent)?;
        } else if let Some(d) = d_audio_latent {
            d.iter_mut().for_each(|x| *x = T::zero());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub grid: HashGridConfig,
    pub condition: ConditionConfig,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub geo_features: usize,
    pub density: DensityActivation,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            grid: HashGridConfig::default(),
            condition: ConditionConfig::default(),
            hidden_width: 64,
            hidden_layers: 2,
            geo_features: 15,
            density: DensityActivation::Softplus,
        }
    }
}

/// Reusable buffers for batched field evaluation.
#[derive(Clone, Debug, Default)]
pub struct FieldWorkspace<T> {
    rows: usize,
    positions: Vec<[T; 3]>,
    sigma_in: Vec<T>,
    sigma_trace: MlpTrace<T>,
    color_in: Vec<T>,
    color_trace: MlpTrace<T>,
    sigma_pre: Vec<T>,
    outputs: Vec<FieldOutput<T>>,
}

impl<T: Real> FieldWorkspace<T> {
    pub fn new() -> Self {
        FieldWorkspace {
            rows: 0,
            positions: Vec::new(),
            sigma_in: Vec::new(),
            sigma_trace: MlpTrace::new(),
            color_in: Vec::new(),
            color_trace: MlpTrace::new(),
            sigma_pre: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn outputs(&self) -> &[FieldOutput<T>] {
        &self.outputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField {
    config: FieldConfig,
    encoder: TriplaneEncoder,
    condition: ConditionEncoder,
    sigma_net: Mlp,
    color_net: Mlp,
}

fn check_direction<T: Real>(d: [T; 3]) -> Result<()> {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !n.is_finite() || (n - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::Domain(format!("view direction norm {n} is not 1")));
    }
    Ok(())
}

impl RadianceField {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: FieldConfig, rng: &mut R) -> Result<Self> {
        if config.hidden_layers == 0 {
            return Err(Error::Config("field needs at least one hidden layer".into()));
        }
        let encoder = TriplaneEncoder::new(store, config.grid, rng)?;
        let condition = ConditionEncoder::new(store, config.condition, rng)?;
        let hidden = vec![config.hidden_width; config.hidden_layers];
        let sigma_widths: Vec<usize> = std::iter::once(encoder.output_width() + config.condition.fused_width())
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1 + config.geo_features))
            .collect();
        let sigma_net = Mlp::new(store, "field.sigma", &sigma_widths, OutputActivation::Identity, rng)?;
        let color_widths: Vec<usize> = std::iter::once(config.geo_features + SH_WIDTH)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(3))
            .collect();
        let color_net = Mlp::new(store, "field.color", &color_widths, OutputActivation::Sigmoid, rng)?;
        Ok(RadianceField {
            config,
            encoder,
            condition,
            sigma_net,
            color_net,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn encoder(&self) -> &TriplaneEncoder {
        &self.encoder
    }

    pub fn condition(&self) -> &ConditionEncoder {
        &self.condition
    }

    pub fn sigma_net(&self) -> &Mlp {
        &self.sigma_net
    }

    pub fn color_net(&self) -> &Mlp {
        &self.color_net
    }

    pub fn cond_width(&self) -> usize {
        self.config.condition.fused_width()
    }

    /// Single-point evaluation with full domain checks.
    pub fn eval_point<T: Real>(&self, store: &ParamStore<T>, x: [T; 3], d: [T; 3], cond: &[T]) -> Result<FieldOutput<T>> {
        check_direction(d)?;
        let mut ws = FieldWorkspace::new();
        self.forward_batch(store, &[x], &[d], cond, &mut ws)?;
        Ok(ws.outputs[0])
    }

    /// Evaluates `positions.len()` rows. `cond` is either one fused condition
    /// shared by all rows or one per row.
    pub fn forward_batch<'a, T: Real>(
        &self,
        store: &ParamStore<T>,
        positions: &[[T; 3]],
        directions: &[[T; 3]],
        cond: &[T],
        ws: &'a mut FieldWorkspace<T>,
    ) -> Result<&'a [FieldOutput<T>]> {
        let n = positions.len();
        if directions.len() != n {
            return Err(Error::shape("field directions", n, directions.len()));
        }
        let cw = self.cond_width();
        let per_row = cond.len() == n * cw && n > 1;
        if cond.len() != cw && !per_row {
            return Err(Error::shape("field condition", cw, cond.len()));
        }
        let enc_w = self.encoder.output_width();
        let in_w = enc_w + cw;
        ws.rows = n;
        ws.positions.clear();
        ws.positions.extend_from_slice(positions);
        ws.sigma_in.resize(n * in_w, T::zero());
        for (r, (row, p)) in ws.sigma_in.chunks_exact_mut(in_w).zip(positions).enumerate() {
            self.encoder.encode_into(store, *p, &mut row[..enc_w])?;
            let c = if per_row { &cond[r * cw..(r + 1) * cw] } else { cond };
            row[enc_w..].copy_from_slice(c);
        }
        let sigma_out = self.sigma_net.forward_batch(store, &ws.sigma_in, n, &mut ws.sigma_trace)?;
        let so_w = 1 + self.config.geo_features;
        let ci_w = self.config.geo_features + SH_WIDTH;
        ws.color_in.resize(n * ci_w, T::zero());
        ws.sigma_pre.clear();
        for ((row, out), d) in ws.color_in.chunks_exact_mut(ci_w).zip(sigma_out.chunks_exact(so_w)).zip(directions) {
            ws.sigma_pre.push(out[0]);
            row[..self.config.geo_features].copy_from_slice(&out[1..]);
            row[self.config.geo_features..].copy_from_slice(&sh_encode(*d));
        }
        let colors = self.color_net.forward_batch(store, &ws.color_in, n, &mut ws.color_trace)?;
        let act = self.config.density;
        ws.outputs.clear();
        ws.outputs.extend(ws.sigma_pre.iter().zip(colors.chunks_exact(3)).map(|(&pre, c)| FieldOutput {
            color: [c[0], c[1], c[2]],
            sigma: act.apply(pre),
        }));
        Ok(&ws.outputs)
    }

    /// Back-propagates per-row gradients on `sigma` and `color`. Hash-table
    /// and decoder gradients accumulate into `grads`; the per-row condition
    /// gradient is written to `d_cond` (rows x cond width) when given.
    pub fn backward_batch<T: Real>(
        &self,
        store: &ParamStore<T>,
        ws: &FieldWorkspace<T>,
        d_sigma: &[T],
        d_color: &[[T; 3]],
        grads: &mut Gradients<T>,
        d_cond: Option<&mut [T]>,
    ) -> Result<()> {
        let n = ws.rows;
        if n == 0 {
            return Err(Error::State("field backward called without a forward pass".into()));
        }
        if d_sigma.len() != n || d_color.len() != n {
            return Err(Error::shape("field output gradient rows", n, d_sigma.len().min(d_color.len())));
        }
        let geo = self.config.geo_features;
        let ci_w = geo + SH_WIDTH;
        let so_w = 1 + geo;
        let dc_flat: Vec<T> = d_color.iter().flatten().copied().collect();
        let mut d_color_in = vec![T::zero(); n * ci_w];
        self.color_net
            .backward_batch(store, &ws.color_trace, &dc_flat, grads, Some(&mut d_color_in))?;
        let act = self.config.density;
        let mut d_sigma_out = vec![T::zero(); n * so_w];
        for (r, row) in d_sigma_out.chunks_exact_mut(so_w).enumerate() {
            let pre = ws.sigma_pre[r];
            row[0] = d_sigma[r] * act.derivative(pre, ws.outputs[r].sigma);
            row[1..].copy_from_slice(&d_color_in[r * ci_w..r * ci_w + geo]);
        }
        let enc_w = self.encoder.output_width();
        let cw = self.cond_width();
        let in_w = enc_w + cw;
        let mut d_in = vec![T::zero(); n * in_w];
        self.sigma_net
            .backward_batch(store, &ws.sigma_trace, &d_sigma_out, grads, Some(&mut d_in))?;
        for (row, p) in d_in.chunks_exact(in_w).zip(&ws.positions) {
            self.encoder.backward(*p, &row[..enc_w], grads)?;
        }
        if let Some(dc) = d_cond {
            if dc.len() != n * cw {
                return Err(Error::shape("field condition gradient", n * cw, dc.len()));
            }
            for (dst, row) in dc.chunks_exact_mut(cw).zip(d_in.chunks_exact(in_w)) {
                dst.copy_from_slice(&row[enc_w..]);
            }
        }
        Ok(())
    }
}
