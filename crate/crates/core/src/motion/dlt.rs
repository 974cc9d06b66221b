use rand::Rng;
use serde::{Deserialize, Serialize};

use super::landmarks::{LandmarkSet, LANDMARK_VALUES};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Linear, Mlp, MlpTrace, OutputActivation, ParamGroup, ParamId, ParamStore};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DltConfig {
    /// Frames per window, odd; the prediction is for the center frame.
    pub window: usize,
    /// Width of each per-frame input (audio latent or raw features).
    pub input_width: usize,
    pub model_width: usize,
    pub head_hidden: usize,
    pub blink_width: usize,
}

impl Default for DltConfig {
    fn default() -> Self {
        DltConfig {
            window: 9,
            input_width: 16,
            model_width: 64,
            head_hidden: 64,
            blink_width: 4,
        }
    }
}

/// Dynamic Landmark Transformer: per-frame linear embedding plus a learned
/// position embedding, one single-head self-attention block with a residual
/// connection, mean pooling over the window, then a two-layer head that
/// reads the pooled feature concatenated with the blink code and emits
/// 68 x 3 coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Dlt {
    config: DltConfig,
    embed: Linear,
    position: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    head: Mlp,
}

#[derive(Clone, Debug, Default)]
pub struct DltTrace<T> {
    batch: usize,
    x: Vec<T>,
    e: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: Vec<T>,
    head: MlpTrace<T>,
}

impl<T: Real> DltTrace<T> {
    pub fn new() -> Self {
        DltTrace {
            batch: 0,
            x: Vec::new(),
            e: Vec::new(),
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
            attn: Vec::new(),
            head: MlpTrace::new(),
        }
    }

    pub fn output(&self) -> &[T] {
        self.head.output()
    }

    /// Attention weights, `batch x W x W`, rows summing to one.
    pub fn attention(&self) -> &[T] {
        &self.attn
    }
}

const OUTPUT_SHRINK: f64 = 0.01;

impl Dlt {
    /// `mean_landmarks` initializes the output bias (zeros when absent), and
    /// then the output weights are shrunk so the untrained head predicts
    /// close to that mean instead of large random offsets.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: DltConfig,
        mean_landmarks: Option<&LandmarkSet>,
        rng: &mut R,
    ) -> Result<Self> {
        if config.window.is_multiple_of(2) {
            return Err(Error::Config(format!("dlt window must be odd, got {}", config.window)));
        }
        let (w, d, m) = (config.window, config.input_width, config.model_width);
        let embed = Linear::new(store, "dlt.embed", d, m, rng)?;
        let position = store.add_uniform("dlt.position", &[w, m], 0.1, ParamGroup::Network, rng)?;
        let bound = (3.0 / m as f64).sqrt();
        let wq = store.add_uniform("dlt.attn.q", &[m, m], bound, ParamGroup::Network, rng)?;
        let wk = store.add_uniform("dlt.attn.k", &[m, m], bound, ParamGroup::Network, rng)?;
        let wv = store.add_uniform("dlt.attn.v", &[m, m], bound, ParamGroup::Network, rng)?;
        let head = Mlp::new(
            store,
            "dlt.head",
            &[m + config.blink_width, config.head_hidden, LANDMARK_VALUES],
            OutputActivation::Identity,
            rng,
        )?;
        let dlt = Dlt {
            config,
            embed,
            position,
            wq,
            wk,
            wv,
            head,
        };
        if let Some(mean) = mean_landmarks {
            dlt.set_output_bias(store, mean);
            store
                .get_mut(dlt.output_weight())
                .iter_mut()
                .for_each(|w| *w *= T::lit(OUTPUT_SHRINK));
        }
        Ok(dlt)
    }

    pub fn config(&self) -> &DltConfig {
        &self.config
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn output_bias(&self) -> ParamId {
        self.head.layers()[self.head.layers().len() - 1].bias
    }

    pub fn output_weight(&self) -> ParamId {
        self.head.layers()[self.head.layers().len() - 1].weight
    }

    pub fn set_output_bias<T: Real>(&self, store: &mut ParamStore<T>, mean: &LandmarkSet) {
        let bias = store.get_mut(self.output_bias());
        for (b, v) in bias.iter_mut().zip(mean.flatten()) {
            *b = T::lit(v as f64);
        }
    }

    fn window_len(&self) -> usize {
        self.config.window * self.config.input_width
    }

    /// `windows`: `batch x W x D`, `blink`: `batch x D_b`; returns
    /// `batch x 204`.
    pub fn forward_batch<'a, T: Real>(
        &self,
        store: &ParamStore<T>,
        windows: &[T],
        blink: &[T],
        batch: usize,
        trace: &'a mut DltTrace<T>,
    ) -> Result<&'a [T]> {
        let (w, m, db) = (self.config.window, self.config.model_width, self.config.blink_width);
        if batch == 0 {
            return Err(Error::Domain("dlt batch must be nonempty".into()));
        }
        if windows.len() != batch * self.window_len() {
            return Err(Error::shape("dlt window", batch * self.window_len(), windows.len()));
        }
        if blink.len() != batch * db {
            return Err(Error::shape("dlt blink code", batch * db, blink.len()));
        }
        let rows = batch * w;
        trace.batch = batch;
        trace.x.clear();
        trace.x.extend_from_slice(windows);
        trace.e.resize(rows * m, T::zero());
        self.embed.forward_batch(store, windows, rows, &mut trace.e);
        let pos = store.get(self.position);
        for win in trace.e.chunks_exact_mut(w * m) {
            win.iter_mut().zip(pos).for_each(|(e, &p)| *e += p);
        }
        for (id, out) in [(self.wq, &mut trace.q), (self.wk, &mut trace.k), (self.wv, &mut trace.v)] {
            out.resize(rows * m, T::zero());
            T::gemm(rows, m, m, T::one(), &trace.e, false, store.get(id), false, T::zero(), out);
        }
        let scale = T::lit(1.0 / (m as f64).sqrt());
        trace.attn.resize(batch * w * w, T::zero());
        let mut head_in = vec![T::zero(); batch * (m + db)];
        for b in 0..batch {
            let q = &trace.q[b * w * m..(b + 1) * w * m];
            let k = &trace.k[b * w * m..(b + 1) * w * m];
            let v = &trace.v[b * w * m..(b + 1) * w * m];
            let e = &trace.e[b * w * m..(b + 1) * w * m];
            let a = &mut trace.attn[b * w * w..(b + 1) * w * w];
            T::gemm(w, m, w, scale, q, false, k, true, T::zero(), a);
            for row in a.chunks_exact_mut(w) {
                softmax_in_place(row);
            }
            // pooled = mean_i (E_i + sum_j A_ij V_j) = mean(E) + (colmean A) V
            let pooled = &mut head_in[b * (m + db)..b * (m + db) + m];
            let inv_w = T::lit(1.0 / w as f64);
            for i in 0..w {
                for c in 0..m {
                    pooled[c] += e[i * m + c] * inv_w;
                }
            }
            for j in 0..w {
                let col: T = (0..w).map(|i| a[i * w + j]).sum::<T>() * inv_w;
                for c in 0..m {
                    pooled[c] += col * v[j * m + c];
                }
            }
            head_in[b * (m + db) + m..(b + 1) * (m + db)].copy_from_slice(&blink[b * db..(b + 1) * db]);
        }
        self.head.forward_batch(store, &head_in, batch, &mut trace.head)
    }

    /// Back-propagates `upstream` (`batch x 204`). Input gradients are
    /// overwritten into `d_windows` / `d_blink` when given.
    pub fn backward_batch<T: Real>(
        &self,
        store: &ParamStore<T>,
        trace: &DltTrace<T>,
        upstream: &[T],
        grads: &mut Gradients<T>,
        d_windows: Option<&mut [T]>,
        d_blink: Option<&mut [T]>,
    ) -> Result<()> {
        let batch = trace.batch;
        if batch == 0 {
            return Err(Error::State("dlt backward called without a forward pass".into()));
        }
        let (w, m, db) = (self.config.window, self.config.model_width, self.config.blink_width);
        let rows = batch * w;
        let mut d_head_in = vec![T::zero(); batch * (m + db)];
        self.head
            .backward_batch(store, &trace.head, upstream, grads, Some(&mut d_head_in))?;
        if let Some(d) = d_blink {
            if d.len() != batch * db {
                return Err(Error::shape("dlt blink gradient", batch * db, d.len()));
            }
            for b in 0..batch {
                d[b * db..(b + 1) * db].copy_from_slice(&d_head_in[b * (m + db) + m..(b + 1) * (m + db)]);
            }
        }
        let scale = T::lit(1.0 / (m as f64).sqrt());
        let inv_w = T::lit(1.0 / w as f64);
        let mut de = vec![T::zero(); rows * m];
        let mut dq = vec![T::zero(); rows * m];
        let mut dk = vec![T::zero(); rows * m];
        let mut dv = vec![T::zero(); rows * m];
        let mut dh = vec![T::zero(); w * m];
        let mut da = vec![T::zero(); w * w];
        for b in 0..batch {
            let span = b * w * m..(b + 1) * w * m;
            let dp = &d_head_in[b * (m + db)..b * (m + db) + m];
            for row in dh.chunks_exact_mut(m) {
                row.iter_mut().zip(dp).for_each(|(h, &g)| *h = g * inv_w);
            }
            de[span.clone()].copy_from_slice(&dh);
            let a = &trace.attn[b * w * w..(b + 1) * w * w];
            // dA = dH V^T, dV = A^T dH
            T::gemm(w, m, w, T::one(), &dh, false, &trace.v[span.clone()], true, T::zero(), &mut da);
            T::gemm(w, w, m, T::one(), a, true, &dh, false, T::zero(), &mut dv[span.clone()]);
            // softmax backward, folded with the score scale
            for (arow, drow) in a.chunks_exact(w).zip(da.chunks_exact_mut(w)) {
                let dot: T = arow.iter().zip(drow.iter()).map(|(&p, &g)| p * g).sum();
                drow.iter_mut().zip(arow).for_each(|(g, &p)| *g = p * (*g - dot) * scale);
            }
            T::gemm(w, w, m, T::one(), &da, false, &trace.k[span.clone()], false, T::zero(), &mut dq[span.clone()]);
            T::gemm(w, w, m, T::one(), &da, true, &trace.q[span.clone()], false, T::zero(), &mut dk[span.clone()]);
        }
        for (id, d) in [(self.wq, &dq), (self.wk, &dk), (self.wv, &dv)] {
            T::gemm(m, rows, m, T::one(), &trace.e, true, d, false, T::one(), grads.slot_mut(id));
            T::gemm(rows, m, m, T::one(), d, false, store.get(id), true, T::one(), &mut de);
        }
        let dpos = grads.slot_mut(self.position);
        for win in de.chunks_exact(w * m) {
            dpos.iter_mut().zip(win).for_each(|(g, &d)| *g += d);
        }
        let d_windows = match d_windows {
            Some(d) if d.len() != rows * self.config.input_width => {
                return Err(Error::shape("dlt window gradient", rows * self.config.input_width, d.len()))
            }
            other => other,
        };
        self.embed.backward_batch(store, &trace.x, rows, &de, grads, d_windows);
        Ok(())
    }

    /// Landmarks for the window's center frame.
    pub fn predict(&self, store: &ParamStore<f32>, window: &[f32], blink: &[f32], frame: usize) -> Result<LandmarkSet> {
        let mut trace = DltTrace::new();
        let out = self.forward_batch(store, window, blink, 1, &mut trace)?;
        LandmarkSet::from_flat(frame, out)
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Stacks the `window` frames centered on `center` from a `frames x width`
/// buffer, repeating the first/last frame past the ends.
pub fn gather_window<T: Copy>(per_frame: &[T], width: usize, center: usize, window: usize) -> Vec<T> {
    let n = per_frame.len() / width;
    let half = (window / 2) as isize;
    (-half..=half)
        .flat_map(|k| {
            let j = (center as isize + k).clamp(0, n as isize - 1) as usize;
            per_frame[j * width..(j + 1) * width].iter().copied()
        })
        .collect()
}
