use rand::Rng;
use serde::{Deserialize, Serialize};

use super::store::{Gradients, ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
    Softplus,
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl OutputActivation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            OutputActivation::Identity => x,
            OutputActivation::Sigmoid => sigmoid(x),
            OutputActivation::Softplus => softplus(x),
        }
    }

    /// Derivative given the pre-activation and the activated value.
    pub fn derivative<T: Real>(self, pre: T, post: T) -> T {
        match self {
            OutputActivation::Identity => T::one(),
            OutputActivation::Sigmoid => post * (T::one() - post),
            OutputActivation::Softplus => sigmoid(pre),
        }
    }
}

/// Dense affine layer `y = x W + b`. The weight is stored `(fan_in, fan_out)`
/// row-major so batched forwards are a plain GEMM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], bound, ParamGroup::Network, rng)?;
        let bias = store.add_zeros(format!("{name}.bias"), &[fan_out], ParamGroup::Network)?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    /// `out` (batch x fan_out) is overwritten.
    pub fn forward_batch<T: Real>(&self, store: &ParamStore<T>, x: &[T], batch: usize, out: &mut [T]) {
        debug_assert_eq!(x.len(), batch * self.fan_in);
        debug_assert_eq!(out.len(), batch * self.fan_out);
        let b = store.get(self.bias);
        for row in out.chunks_exact_mut(self.fan_out) {
            row.copy_from_slice(b);
        }
        T::gemm(
            batch,
            self.fan_in,
            self.fan_out,
            T::one(),
            x,
            false,
            store.get(self.weight),
            false,
            T::one(),
            out,
        );
    }

    /// Accumulates weight/bias gradients; writes the input gradient into `dx`
    /// when given (overwriting it).
    pub fn backward_batch<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        batch: usize,
        dy: &[T],
        grads: &mut Gradients<T>,
        dx: Option<&mut [T]>,
    ) {
        debug_assert_eq!(dy.len(), batch * self.fan_out);
        T::gemm(
            self.fan_in,
            batch,
            self.fan_out,
            T::one(),
            x,
            true,
            dy,
            false,
            T::one(),
            grads.slot_mut(self.weight),
        );
        let db = grads.slot_mut(self.bias);
        for row in dy.chunks_exact(self.fan_out) {
            db.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
        }
        if let Some(dx) = dx {
            T::gemm(
                batch,
                self.fan_out,
                self.fan_in,
                T::one(),
                dy,
                false,
                store.get(self.weight),
                true,
                T::zero(),
                dx,
            );
        }
    }
}

/// Fixed-topology perceptron: ReLU on every hidden layer, a chosen
/// activation on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    output: OutputActivation,
}

/// Activations retained by a forward pass, consumed by the matching backward.
#[derive(Clone, Debug, Default)]
pub struct MlpTrace<T> {
    batch: usize,
    input: Vec<T>,
    hidden: Vec<Vec<T>>,
    pre_output: Vec<T>,
    output: Vec<T>,
}

impl<T: Real> MlpTrace<T> {
    pub fn new() -> Self {
        MlpTrace {
            batch: 0,
            input: Vec::new(),
            hidden: Vec::new(),
            pre_output: Vec::new(),
            output: Vec::new(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[T] {
        &self.output
    }

    pub fn clear(&mut self) {
        self.batch = 0;
    }
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("mlp {name}: widths {widths:?} need >= 2 positive entries")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers, output })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.fan_out))
            .collect()
    }

    fn check_input(&self, len: usize, batch: usize) -> Result<()> {
        if len != batch * self.input_width() {
            return Err(Error::shape(
                "mlp layer 0 input",
                batch * self.input_width(),
                len,
            ));
        }
        Ok(())
    }

    /// Single-row forward without retaining activations.
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, input: &[T]) -> Result<Vec<T>> {
        let mut trace = MlpTrace::new();
        self.forward_batch(store, input, 1, &mut trace)?;
        Ok(trace.output)
    }

    /// Runs `batch` rows (row-major in `input`), retaining what backward needs.
    pub fn forward_batch<'a, T: Real>(
        &self,
        store: &ParamStore<T>,
        input: &[T],
        batch: usize,
        trace: &'a mut MlpTrace<T>,
    ) -> Result<&'a [T]> {
        self.check_input(input.len(), batch)?;
        trace.batch = batch;
        trace.input.clear();
        trace.input.extend_from_slice(input);
        let n_hidden = self.layers.len() - 1;
        trace.hidden.resize_with(n_hidden, Vec::new);
        for (i, layer) in self.layers.iter().enumerate() {
            let out_len = batch * layer.fan_out;
            if i < n_hidden {
                let (done, rest) = trace.hidden.split_at_mut(i);
                let x = if i == 0 { &trace.input } else { &done[i - 1] };
                let y = &mut rest[0];
                y.resize(out_len, T::zero());
                layer.forward_batch(store, x, batch, y);
                y.iter_mut().for_each(|v| *v = v.max(T::zero()));
            } else {
                let x = if i == 0 { &trace.input } else { &trace.hidden[i - 1] };
                trace.pre_output.resize(out_len, T::zero());
                layer.forward_batch(store, x, batch, &mut trace.pre_output);
                let act = self.output;
                trace.output.clear();
                trace.output.extend(trace.pre_output.iter().map(|&p| act.apply(p)));
            }
        }
        Ok(&trace.output)
    }

    /// Back-propagates `upstream` (gradient w.r.t. the activated output),
    /// accumulating into `grads`. The input gradient lands in `input_grad`
    /// when provided.
    pub fn backward_batch<T: Real>(
        &self,
        store: &ParamStore<T>,
        trace: &MlpTrace<T>,
        upstream: &[T],
        grads: &mut Gradients<T>,
        input_grad: Option<&mut [T]>,
    ) -> Result<()> {
        if trace.batch == 0 {
            return Err(Error::State("mlp backward called without a retained forward pass".into()));
        }
        let batch = trace.batch;
        if upstream.len() != batch * self.output_width() {
            return Err(Error::shape("mlp upstream gradient", batch * self.output_width(), upstream.len()));
        }
        if let Some(dx) = &input_grad {
            if dx.len() != batch * self.input_width() {
                return Err(Error::shape("mlp input gradient", batch * self.input_width(), dx.len()));
            }
        }
        let act = self.output;
        let mut delta: Vec<T> = upstream
            .iter()
            .zip(&trace.pre_output)
            .zip(&trace.output)
            .map(|((&g, &pre), &post)| g * act.derivative(pre, post))
            .collect();
        let mut input_grad = input_grad;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = if i == 0 { &trace.input } else { &trace.hidden[i - 1] };
            if i == 0 {
                layer.backward_batch(store, x, batch, &delta, grads, input_grad.as_deref_mut());
            } else {
                let mut dx = vec![T::zero(); batch * layer.fan_in];
                layer.backward_batch(store, x, batch, &delta, grads, Some(&mut dx));
                dx.iter_mut().zip(x).for_each(|(d, &h)| {
                    if h <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = dx;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn net(widths: &[usize], out: OutputActivation) -> (ParamStore<f64>, Mlp) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut store, "n", widths, out, &mut rng).unwrap();
        (store, mlp)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let (mut store, mlp) = net(&[4, 8, 3], OutputActivation::Identity);
        let ids: Vec<_> = store.params().map(|(id, _)| id).collect();
        for id in ids {
            store.get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(mlp.forward(&store, &[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let (mut store, mlp) = net(&[3, 3], OutputActivation::Identity);
        let w = mlp.layers()[0].weight;
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        store.get_mut(w).copy_from_slice(&eye);
        let v = [0.25, -7.0, 3.5];
        assert_eq!(mlp.forward(&store, &v).unwrap(), v.to_vec());

        let mut trace = MlpTrace::new();
        mlp.forward_batch(&store, &v, 1, &mut trace).unwrap();
        let mut grads = Gradients::for_store(&store);
        let mut dx = [0.0; 3];
        mlp.backward_batch(&store, &trace, &[1.0; 3], &mut grads, Some(&mut dx)).unwrap();
        assert_eq!(dx, [1.0; 3]);
    }

    #[test]
    fn width_mismatch_names_the_layer() {
        let (store, mlp) = net(&[4, 2], OutputActivation::Identity);
        let err = mlp.forward(&store, &[1.0; 3]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let (store, mlp) = net(&[2, 2], OutputActivation::Identity);
        let mut grads = Gradients::for_store(&store);
        let trace = MlpTrace::new();
        assert!(matches!(
            mlp.backward_batch(&store, &trace, &[1.0, 1.0], &mut grads, None),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn repeated_backward_doubles_gradients() {
        let (store, mlp) = net(&[3, 5, 2], OutputActivation::Sigmoid);
        let mut trace = MlpTrace::new();
        mlp.forward_batch(&store, &[0.3, -0.2, 0.9], 1, &mut trace).unwrap();
        let mut once = Gradients::for_store(&store);
        mlp.backward_batch(&store, &trace, &[1.0, -0.5], &mut once, None).unwrap();
        let mut twice = Gradients::for_store(&store);
        mlp.backward_batch(&store, &trace, &[1.0, -0.5], &mut twice, None).unwrap();
        mlp.backward_batch(&store, &trace, &[1.0, -0.5], &mut twice, None).unwrap();
        for (a, b) in once.slots().iter().zip(twice.slots()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let (store, mlp) = net(&[3, 6, 6, 2], OutputActivation::Softplus);
        let rows = [[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut trace = MlpTrace::new();
        let out = mlp.forward_batch(&store, &flat, 2, &mut trace).unwrap().to_vec();
        for (i, r) in rows.iter().enumerate() {
            let single = mlp.forward(&store, r).unwrap();
            assert!((single[0] - out[2 * i]).abs() < 1e-12);
            assert!((single[1] - out[2 * i + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_activations_at_extremes() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }
}
