use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named model parameters. Registration order is the canonical order for
/// serialization and gradient reduction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    decay: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor, decay: bool) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        self.decay.push(decay);
        ParamId(self.tensors.len() - 1)
    }

    /// Linear-layer weight `(fan_in, fan_out)` drawn from U(±1/sqrt(fan_in)).
    pub fn add_linear_weight<R: Rng>(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Tensor::new(&[fan_in, fan_out], data).expect("sized"), true)
    }

    pub fn add_bias(&mut self, name: impl Into<String>, n: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[n]), false)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Replaces values from `(name, tensor)` pairs; names and shapes must
    /// match this store exactly.
    pub fn load(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", self.tensors.len(), named.len())));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected {} {:?}, found {name} {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

/// Binds store parameters into one graph, creating each leaf on first use.
/// With `trainable == false` parameters enter as constants and no gradient
/// bookkeeping happens.
pub struct Binder<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Self { graph: Graph::new(), store, vars: vec![None; store.len()], trainable }
    }

    pub fn p(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.vars[id.0] {
            return Ok(v);
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable { self.graph.param(id.0, t)? } else { self.graph.constant(t)? };
        self.vars[id.0] = Some(v);
        Ok(v)
    }

    /// Dense gradients for every parameter, zeros where unused.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.store.ids().map(|id| vec![0.0; self.store.get(id).len()]).collect();
        for (id, g) in self.graph.param_grads() {
            out[id].copy_from_slice(g);
        }
        out
    }
}
