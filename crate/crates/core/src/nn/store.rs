use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to one named array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer group; decides the learning rate, or excludes the array from
/// updates entirely.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Network,
    Embedding,
    Frozen,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    shape: Vec<usize>,
    group: ParamGroup,
    pub(crate) value: Vec<T>,
    pub(crate) m: Vec<T>,
    pub(crate) v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn value(&self) -> &[T] {
        &self.value
    }
}

/// Named learnable arrays plus their Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
    pub(crate) step: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: Vec<T>,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let name = name.into();
        let numel: usize = shape.iter().product();
        if value.len() != numel {
            return Err(Error::shape(format!("parameter {name}"), numel, value.len()));
        }
        if self.index.contains_key(&name) {
            return Err(Error::State(format!("parameter {name} registered twice")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.clone(),
            shape: shape.to_vec(),
            group,
            m: vec![T::zero(); numel],
            v: vec![T::zero(); numel],
            value,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize], group: ParamGroup) -> Result<ParamId> {
        let numel = shape.iter().product();
        self.add(name, shape, vec![T::zero(); numel], group)
    }

    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        group: ParamGroup,
        rng: &mut R,
    ) -> Result<ParamId> {
        let numel: usize = shape.iter().product();
        let value = (0..numel).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        self.add(name, shape, value, group)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalars across all arrays.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].value
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn set_group(&mut self, id: ParamId, group: ParamGroup) {
        self.params[id.0].group = group;
    }

    /// Converts every array (values and moments) to another scalar type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |xs: &[T]| xs.iter().map(|&x| U::lit(x.to_f64_lossy())).collect();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    group: p.group,
                    value: conv(&p.value),
                    m: conv(&p.m),
                    v: conv(&p.v),
                })
                .collect(),
            index: self.index.clone(),
            step: self.step,
        }
    }

    /// Zeroes the Adam moments and step counter.
    pub fn reset_optimizer(&mut self) {
        for p in &mut self.params {
            p.m.iter_mut().for_each(|x| *x = T::zero());
            p.v.iter_mut().for_each(|x| *x = T::zero());
        }
        self.step = 0;
    }

    /// Copies values for every name present in both stores. Shapes must agree.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<usize> {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(&id) = other.index.get(&p.name) {
                let src = &other.params[id.0];
                if src.shape != p.shape {
                    return Err(Error::shape(format!("parameter {}", p.name), p.value.len(), src.value.len()));
                }
                p.value.copy_from_slice(&src.value);
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// One gradient slot per parameter, shaped like the parameter. Several
/// buffers can be filled independently and merged with [`Gradients::accumulate`].
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    slots: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn for_store(store: &ParamStore<T>) -> Self {
        Gradients {
            slots: store.params.iter().map(|p| vec![T::zero(); p.value.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, id: ParamId) -> &[T] {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.slots[id.0]
    }

    pub fn zero(&mut self) {
        for s in &mut self.slots {
            s.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `other` slot by slot.
    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        if other.slots.len() != self.slots.len() {
            return Err(Error::shape("gradient merge", self.slots.len(), other.slots.len()));
        }
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if dst.len() != src.len() {
                return Err(Error::shape("gradient merge slot", dst.len(), src.len()));
            }
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for s in &mut self.slots {
            s.iter_mut().for_each(|g| *g *= factor);
        }
    }

    #[cfg(test)]
    pub(crate) fn slots(&self) -> &[Vec<T>] {
        &self.slots
    }
}
