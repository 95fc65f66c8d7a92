//! Named parameter storage shared by every model in the crate.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named tensors. Insertion order is the
/// serialization order and the optimizer's moment order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters of one [`ParamSet`] registered as leaves of a [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Binding over graph variables listed in parameter order.
    pub fn new(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::invalid("params", format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Copies every parameter into `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| graph.param(v.clone())).collect(),
        }
    }

    /// Copies every parameter into `graph` as a constant, for inference.
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| graph.constant(v.clone())).collect(),
        }
    }

    /// Gradient per parameter in set order; unreached parameters get zeros.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.values
            .iter()
            .zip(&bound.vars)
            .map(|(v, var)| {
                grads
                    .get(*var)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(v.shape().to_vec()))
            })
            .collect()
    }

    /// Replaces all values with those of `other`, which must have identical layout.
    pub fn load_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.names != other.names
            || self
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(TensorError::invalid("params", "parameter layout mismatch"));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, value) in self.names.iter().zip(&mut self.values) {
            if name.starts_with(prefix) {
                value.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}

/// Seeded source of initial weights: uniform in `±1/sqrt(fan_in)`, zero biases.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(self.rng.gen_range(-bound..=bound)))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape and data agree")
    }

    /// Conv kernel `[out, in, k, ...]`; fan-in is everything after the output axis.
    pub fn kernel<T: Scalar>(&mut self, shape: &[usize]) -> Tensor<T> {
        let fan_in = shape[1..].iter().product();
        self.uniform(shape, fan_in)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
