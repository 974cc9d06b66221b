use super::store::{Gradients, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

/// Bias-corrected Adam. `embedding_lr` applies to [`ParamGroup::Embedding`]
/// arrays (hash tables); every other trainable array uses `lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub embedding_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            embedding_lr: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_embedding_lr(mut self, lr: f64) -> Self {
        self.embedding_lr = lr;
        self
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.embedding_lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid adam hyperparameters {self:?}")))
        }
    }
}

/// Applies one update to every trainable array, then zeroes `grads`.
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, grads: &mut Gradients<T>, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    if grads.len() != store.len() {
        return Err(Error::shape("adam gradient slots", store.len(), grads.len()));
    }
    for (id, p) in store.params() {
        let g = grads.slot(id);
        if g.len() != p.value().len() {
            return Err(Error::shape(format!("gradient of {}", p.name()), p.value().len(), g.len()));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {} at element {i}", p.name())));
        }
    }

    store.step += 1;
    let t = store.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one_b1 = T::lit(1.0 - cfg.beta1);
    let one_b2 = T::lit(1.0 - cfg.beta2);
    let corr1 = T::lit(1.0 - cfg.beta1.powi(t));
    let corr2 = T::lit(1.0 - cfg.beta2.powi(t));
    let eps = T::lit(cfg.eps);
    let net_lr = T::lit(cfg.lr);
    let emb_lr = T::lit(cfg.embedding_lr);

    let ids: Vec<_> = store.params().map(|(id, p)| (id, p.group())).collect();
    for (id, group) in ids {
        let lr = match group {
            ParamGroup::Frozen => continue,
            ParamGroup::Network => net_lr,
            ParamGroup::Embedding => emb_lr,
        };
        let g = grads.slot(id);
        let p = store.param_mut(id);
        for i in 0..g.len() {
            let gi = g[i];
            p.m[i] = b1 * p.m[i] + one_b1 * gi;
            p.v[i] = b2 * p.v[i] + one_b2 * gi * gi;
            let m_hat = p.m[i] / corr1;
            let v_hat = p.v[i] / corr2;
            p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    grads.zero();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    fn scalar_store(x: f64) -> (ParamStore<f64>, super::super::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", &[1], vec![x], ParamGroup::Network).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_is_a_no_op_but_counts_the_step() {
        let (mut store, id) = scalar_store(1.5);
        let mut grads = Gradients::for_store(&store);
        adam_step(&mut store, &mut grads, &AdamConfig::new(0.1)).unwrap();
        assert_eq!(store.get(id), &[1.5]);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn constant_gradient_moves_monotonically_against_its_sign() {
        let (mut store, id) = scalar_store(0.0);
        let mut grads = Gradients::for_store(&store);
        let mut prev = 0.0;
        for _ in 0..200 {
            grads.slot_mut(id)[0] = -0.3;
            adam_step(&mut store, &mut grads, &AdamConfig::new(0.01)).unwrap();
            let x = store.get(id)[0];
            assert!(x > prev);
            prev = x;
        }
    }

    #[test]
    fn three_steps_match_hand_recurrence() {
        // oracle: the textbook recurrence written out in f64
        let (lr, b1, b2, eps, g) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64, 1.0f64);
        let (mut m, mut v, mut x) = (0.0, 0.0, 2.0);
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((x - 1.7).abs() < 1e-6);

        let (mut store, id) = scalar_store(2.0);
        let mut grads = Gradients::for_store(&store);
        for _ in 0..3 {
            grads.slot_mut(id)[0] = g;
            adam_step(&mut store, &mut grads, &AdamConfig::new(lr)).unwrap();
        }
        assert!((store.get(id)[0] - x).abs() < 1e-12);

        let mut s32 = ParamStore::<f32>::new();
        let id32 = s32.add("x", &[1], vec![2.0], ParamGroup::Network).unwrap();
        let mut g32 = Gradients::for_store(&s32);
        for _ in 0..3 {
            g32.slot_mut(id32)[0] = 1.0;
            adam_step(&mut s32, &mut g32, &AdamConfig::new(lr)).unwrap();
        }
        assert!((s32.get(id32)[0] as f64 - x).abs() < 1e-6);
    }

    #[test]
    fn gradients_are_zeroed_after_update() {
        let (mut store, id) = scalar_store(0.0);
        let mut grads = Gradients::for_store(&store);
        grads.slot_mut(id)[0] = 4.0;
        adam_step(&mut store, &mut grads, &AdamConfig::new(0.1)).unwrap();
        assert_eq!(grads.slot(id), &[0.0]);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter_and_changes_nothing() {
        let mut store = ParamStore::<f32>::new();
        let a = store.add("ok", &[1], vec![1.0], ParamGroup::Network).unwrap();
        let b = store.add("bad.weight", &[2], vec![1.0, 1.0], ParamGroup::Network).unwrap();
        let mut grads = Gradients::for_store(&store);
        grads.slot_mut(a)[0] = 1.0;
        grads.slot_mut(b)[1] = f32::NAN;
        let err = adam_step(&mut store, &mut grads, &AdamConfig::new(0.1)).unwrap_err();
        assert!(err.to_string().contains("bad.weight"));
        assert_eq!(store.get(a), &[1.0]);
        assert_eq!(store.step(), 0);
    }

    #[test]
    fn frozen_parameters_never_move() {
        let mut store = ParamStore::<f32>::new();
        let a = store.add("frozen", &[1], vec![1.0], ParamGroup::Frozen).unwrap();
        let mut grads = Gradients::for_store(&store);
        grads.slot_mut(a)[0] = 1.0;
        adam_step(&mut store, &mut grads, &AdamConfig::new(0.1)).unwrap();
        assert_eq!(store.get(a), &[1.0]);
    }

    #[test]
    fn embedding_group_uses_its_own_rate() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("net", &[1], vec![0.0], ParamGroup::Network).unwrap();
        let b = store.add("table", &[1], vec![0.0], ParamGroup::Embedding).unwrap();
        let mut grads = Gradients::for_store(&store);
        grads.slot_mut(a)[0] = 1.0;
        grads.slot_mut(b)[0] = 1.0;
        adam_step(&mut store, &mut grads, &AdamConfig::new(1e-3).with_embedding_lr(1e-2)).unwrap();
        assert!((store.get(a)[0] + 1e-3).abs() < 1e-9);
        assert!((store.get(b)[0] + 1e-2).abs() < 1e-9);
    }
}
