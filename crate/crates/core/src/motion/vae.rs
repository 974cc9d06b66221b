use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mlp, MlpTrace, OutputActivation, ParamStore};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub input_width: usize,
    pub hidden: usize,
    pub latent_width: usize,
    pub beta: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            input_width: 29,
            hidden: 64,
            latent_width: 16,
            beta: 1e-4,
        }
    }
}

/// Posterior parameters and the reparameterized sample for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioLatent<T = f32> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    pub z: Vec<T>,
}

/// `KL(N(mu, exp(logvar)) || N(0, I))`, summed over latent dimensions.
pub fn kl_divergence<T: Real>(mu: &[T], logvar: &[T]) -> T {
    let half = T::lit(0.5);
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| -half * (T::one() + lv - m * m - lv.exp()))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss<T = f32> {
    /// Mean squared reconstruction error over all feature entries.
    pub reconstruction: T,
    /// KL term averaged over the batch.
    pub kl: T,
    pub total: T,
}

#[derive(Clone, Debug, Default)]
pub struct VaeTrace<T> {
    batch: usize,
    input: Vec<T>,
    eps: Vec<T>,
    z: Vec<T>,
    encoder: MlpTrace<T>,
    decoder: MlpTrace<T>,
}

impl<T: Real> VaeTrace<T> {
    pub fn new() -> Self {
        VaeTrace {
            batch: 0,
            input: Vec::new(),
            eps: Vec::new(),
            z: Vec::new(),
            encoder: MlpTrace::new(),
            decoder: MlpTrace::new(),
        }
    }

    /// Posterior means, `batch x latent`.
    pub fn mu(&self, latent: usize) -> Vec<T> {
        self.encoder
            .output()
            .chunks_exact(2 * latent)
            .flat_map(|row| row[..latent].iter().copied())
            .collect()
    }

    pub fn z(&self) -> &[T] {
        &self.z
    }

    pub fn reconstruction(&self) -> &[T] {
        self.decoder.output()
    }
}

/// Encoder `D_a -> hidden -> 2 D_z` emitting `[mu | logvar]`, decoder
/// `D_z -> hidden -> D_a`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    config: VaeConfig,
    encoder: Mlp,
    decoder: Mlp,
}

impl Vae {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, config: VaeConfig, rng: &mut R) -> Result<Self> {
        if !(config.beta >= 0.0) {
            return Err(Error::Config(format!("vae beta must be >= 0, got {}", config.beta)));
        }
        let (d, h, z) = (config.input_width, config.hidden, config.latent_width);
        let encoder = Mlp::new(store, "vae.enc", &[d, h, 2 * z], OutputActivation::Identity, rng)?;
        let decoder = Mlp::new(store, "vae.dec", &[z, h, d], OutputActivation::Identity, rng)?;
        Ok(Vae {
            config,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    /// Standard-normal noise for `batch` latents.
    pub fn sample_eps<T: Real, R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<T> {
        (0..batch * self.config.latent_width)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }

    /// `z = mu + exp(logvar / 2) * eps`; `eps = None` returns `z = mu`.
    pub fn encode<T: Real>(&self, store: &ParamStore<T>, x: &[T], eps: Option<&[T]>) -> Result<AudioLatent<T>> {
        if x.len() != self.config.input_width {
            return Err(Error::shape("vae input features", self.config.input_width, x.len()));
        }
        let zw = self.config.latent_width;
        if let Some(e) = eps {
            if e.len() != zw {
                return Err(Error::shape("vae noise", zw, e.len()));
            }
        }
        let out = self.encoder.forward(store, x)?;
        let (mu, logvar) = (out[..zw].to_vec(), out[zw..].to_vec());
        let z = match eps {
            Some(e) => reparameterize(&mu, &logvar, e),
            None => mu.clone(),
        };
        Ok(AudioLatent { mu, logvar, z })
    }

    pub fn decode<T: Real>(&self, store: &ParamStore<T>, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.config.latent_width {
            return Err(Error::shape("vae latent", self.config.latent_width, z.len()));
        }
        self.decoder.forward(store, z)
    }

    /// Posterior means for a batch of frames (the deterministic encoding used
    /// at inference).
    pub fn encode_means<T: Real>(&self, store: &ParamStore<T>, x: &[T], batch: usize) -> Result<Vec<T>> {
        let mut trace = MlpTrace::new();
        self.encoder.forward_batch(store, x, batch, &mut trace)?;
        let zw = self.config.latent_width;
        Ok(trace
            .output()
            .chunks_exact(2 * zw)
            .flat_map(|row| row[..zw].iter().copied())
            .collect())
    }

    /// Forward pass of `reconstruction MSE + beta * KL` on `batch` rows.
    pub fn forward_batch<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        batch: usize,
        eps: &[T],
        trace: &mut VaeTrace<T>,
    ) -> Result<VaeLoss<T>> {
        let (d, zw) = (self.config.input_width, self.config.latent_width);
        if x.len() != batch * d {
            return Err(Error::shape("vae input batch", batch * d, x.len()));
        }
        if eps.len() != batch * zw {
            return Err(Error::shape("vae noise batch", batch * zw, eps.len()));
        }
        trace.batch = batch;
        trace.input.clear();
        trace.input.extend_from_slice(x);
        trace.eps.clear();
        trace.eps.extend_from_slice(eps);
        let enc = self.encoder.forward_batch(store, x, batch, &mut trace.encoder)?;
        trace.z.clear();
        let mut kl = T::zero();
        for (row, e) in enc.chunks_exact(2 * zw).zip(eps.chunks_exact(zw)) {
            let (mu, lv) = row.split_at(zw);
            trace.z.extend(reparameterize(mu, lv, e));
            kl += kl_divergence(mu, lv);
        }
        let recon = self.decoder.forward_batch(store, &trace.z, batch, &mut trace.decoder)?;
        let n = T::lit((batch * d) as f64);
        let mse = recon.iter().zip(x).map(|(&r, &t)| (r - t) * (r - t)).sum::<T>() / n;
        let kl = kl / T::lit(batch as f64);
        let total = mse + T::lit(self.config.beta) * kl;
        if !total.is_finite() {
            return Err(Error::Numeric("vae loss is not finite".into()));
        }
        Ok(VaeLoss {
            reconstruction: mse,
            kl,
            total,
        })
    }

    /// Backward of `loss_weight` times [`Vae::forward_batch`]'s total loss,
    /// plus an optional external gradient on the posterior means
    /// (`batch x latent`) from a downstream consumer of `mu`.
    pub fn backward_batch<T: Real>(
        &self,
        store: &ParamStore<T>,
        trace: &VaeTrace<T>,
        loss_weight: T,
        grads: &mut Gradients<T>,
        extra_dmu: Option<&[T]>,
    ) -> Result<()> {
        let batch = trace.batch;
        if batch == 0 {
            return Err(Error::State("vae backward called without a forward pass".into()));
        }
        let (d, zw) = (self.config.input_width, self.config.latent_width);
        if let Some(g) = extra_dmu {
            if g.len() != batch * zw {
                return Err(Error::shape("vae mean gradient", batch * zw, g.len()));
            }
        }
        let scale = loss_weight * T::lit(2.0 / (batch * d) as f64);
        let d_recon: Vec<T> = trace
            .decoder
            .output()
            .iter()
            .zip(&trace.input)
            .map(|(&r, &t)| scale * (r - t))
            .collect();
        let mut dz = vec![T::zero(); batch * zw];
        self.decoder
            .backward_batch(store, &trace.decoder, &d_recon, grads, Some(&mut dz))?;
        let kl_scale = loss_weight * T::lit(self.config.beta / batch as f64);
        let half = T::lit(0.5);
        let enc = trace.encoder.output();
        let mut d_enc = vec![T::zero(); batch * 2 * zw];
        for b in 0..batch {
            for j in 0..zw {
                let mu = enc[b * 2 * zw + j];
                let lv = enc[b * 2 * zw + zw + j];
                let g = dz[b * zw + j];
                let e = trace.eps[b * zw + j];
                let extra = extra_dmu.map_or(T::zero(), |x| x[b * zw + j]);
                d_enc[b * 2 * zw + j] = g + kl_scale * mu + extra;
                d_enc[b * 2 * zw + zw + j] = g * e * half * (half * lv).exp() + kl_scale * half * (lv.exp() - T::one());
            }
        }
        self.encoder.backward_batch(store, &trace.encoder, &d_enc, grads, None)
    }
}

fn reparameterize<T: Real>(mu: &[T], logvar: &[T], eps: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}
