use rand::Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = t;
        } else {
            self.entries.push((name, t));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), tape.leaf(t.clone(), requires_grad)))
                .collect(),
        }
    }

    /// Prefixes every name, for merging into a larger collection.
    pub fn prefixed(&self, prefix: &str) -> Params {
        Params {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (format!("{prefix}{n}"), t.clone()))
                .collect(),
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> Params {
        Params {
            entries: self
                .entries
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|s| (s.to_string(), t.clone())))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: Params) {
        for (n, t) in other.entries {
            self.insert(n, t);
        }
    }
}

/// Tape handles for a [`Params`] collection, in the same order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    /// Pairs existing tape variables with the names of `params`, in order.
    pub fn from_vars(params: &Params, vars: &[Var]) -> Result<Self> {
        if params.len() != vars.len() {
            return Err(Error::invalid("one variable per parameter is required"));
        }
        Ok(Bound {
            vars: params.iter().map(|(n, _)| n.to_string()).zip(vars.iter().copied()).collect(),
        })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().map(|(_, v)| *v)
    }

    /// Gradients in parameter order.
    pub fn grads<'g>(&self, grads: &'g Gradients) -> Vec<Option<&'g Tensor>> {
        self.vars.iter().map(|(_, v)| grads.get(*v)).collect()
    }
}

/// Uniform initialization in `[low, high)`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, low: f64, high: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(low..high)).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

/// He-uniform (Kaiming) weights for a `fan_in x fan_out` affine layer.
pub fn he_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(rng, fan_in, fan_out, -bound, bound)
}

/// Glorot-uniform weights.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, -bound, bound)
}
