//! Named parameter storage shared by layers, models and the optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Serialized form: names plus shapes and values, without gradient buffers.
#[derive(Serialize, Deserialize)]
struct ParamSetRepr {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl From<ParamSet> for ParamSetRepr {
    fn from(p: ParamSet) -> Self {
        let tensors = p
            .tensors
            .into_iter()
            .map(|t| Tensor::from_parts(t.shape().to_vec(), t.into_data()))
            .collect();
        Self {
            names: p.names,
            tensors,
        }
    }
}

impl From<ParamSetRepr> for ParamSet {
    fn from(r: ParamSetRepr) -> Self {
        let mut p = ParamSet::new();
        for (n, t) in r.names.into_iter().zip(r.tensors) {
            p.add(n, t);
        }
        p
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(from = "ParamSetRepr", into = "ParamSetRepr")]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Equal names, shapes and values; gradient buffers are ignored.
impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape() && a.data() == b.data())
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
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

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Loads every parameter onto `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Graph<'t> {
        let vars = self.tensors.iter().map(|t| tape.param(t)).collect();
        Graph { tape, vars }
    }

    /// Loads parameters as constants for inference.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Graph<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.constant(Tensor::new(t.shape(), t.data().to_vec()).expect("valid shape")))
            .collect();
        Graph { tape, vars }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the tape's leaf gradients into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, graph: &Graph<'_>) -> Result<()> {
        if graph.vars.len() != self.tensors.len() {
            return Err(Error::Contract("graph was bound to a different parameter set".into()));
        }
        for (t, &v) in self.tensors.iter_mut().zip(&graph.vars) {
            if let Some(g) = graph.tape.grad(v) {
                let buf = t.grad_mut().expect("parameters carry gradient buffers");
                for (b, x) in buf.iter_mut().zip(g.data()) {
                    *b += x;
                }
            }
        }
        Ok(())
    }
}

/// A tape together with the variables a [`ParamSet`] was bound to.
pub struct Graph<'t> {
    pub tape: &'t Tape,
    vars: Vec<Var>,
}

impl<'t> Graph<'t> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}
