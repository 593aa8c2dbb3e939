//! Named parameter storage and the per-pass binding of parameters to a tape.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Trained by the optimizer.
    Weight,
    /// State updated outside the optimizer (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub role: ParamRole,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, role: ParamRole) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, role });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role == ParamRole::Weight)
            .map(|p| p.value.len())
            .sum()
    }

    /// Replace the value of a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "{}: {:?} vs {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Round every parameter and buffer through `f32`.
    pub fn round_to_f32(&mut self) {
        self.params.iter_mut().for_each(|p| p.value.round_to_f32());
    }
}

/// Whether normalization layers use batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass of a network over a tape.
///
/// Parameters are bound to tape leaves lazily, once per pass. Training-mode
/// normalization records running-statistic updates here instead of writing
/// them; [`Forward::finish`] hands them back to the owner of the store.
pub struct Forward<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    mode: Mode,
    differentiable: bool,
    buffer_updates: Vec<(ParamId, Tensor)>,
    wanted_taps: Vec<String>,
    taps: Vec<(String, Var)>,
}

/// Result of a finished forward pass.
pub struct Bindings {
    /// `(param, leaf)` pairs for every weight bound during the pass.
    pub weights: Vec<(ParamId, Var)>,
    pub buffer_updates: Vec<(ParamId, Tensor)>,
    pub taps: Vec<(String, Var)>,
}

impl<'a> Forward<'a> {
    /// `differentiable` decides whether weights become gradient leaves.
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode, differentiable: bool) -> Self {
        Self {
            tape,
            store,
            bound: vec![None; store.len()],
            mode,
            differentiable,
            buffer_updates: Vec::new(),
            wanted_taps: Vec::new(),
            taps: Vec::new(),
        }
    }

    pub fn with_taps(mut self, names: &[String]) -> Self {
        self.wanted_taps = names.to_vec();
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self
            .tape
            .leaf(p.value.clone(), self.differentiable && p.role == ParamRole::Weight);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor {
        self.store.value(id)
    }

    pub fn update_buffer(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    /// Register an intermediate activation under `name` if it was requested.
    pub fn tap(&mut self, name: &str, v: Var) {
        if self.wanted_taps.iter().any(|t| t == name) {
            self.taps.push((name.to_string(), v));
        }
    }

    pub fn finish(self) -> Bindings {
        let weights = self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                (self.store.get(ParamId(i)).role == ParamRole::Weight).then_some((ParamId(i), v))
            })
            .collect();
        Bindings {
            weights,
            buffer_updates: self.buffer_updates,
            taps: self.taps,
        }
    }
}

impl ParamStore {
    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Tensor)>) {
        for (id, t) in updates {
            self.params[id.0].value = t;
        }
    }
}

/// Allocates named, seeded parameters while a network is being assembled.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: Vec::new(),
        }
    }

    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    /// Fan-in-scaled uniform weight, bound `1/sqrt(fan_in)`.
    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound));
        let name = self.full_name(name);
        self.store.add(name, t, ParamRole::Weight)
    }

    pub fn constant(&mut self, name: &str, value: Tensor, role: ParamRole) -> ParamId {
        let name = self.full_name(name);
        self.store.add(name, value, role)
    }
}
