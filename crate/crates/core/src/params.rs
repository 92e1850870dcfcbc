//! Named learnable tensors in a fixed order.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Shape, Tensor};

/// Position of a parameter in a [`ModelParams`] / [`ParamLayout`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `[-g b, g b]` with `b = sqrt(6 / ((1 + slope^2) fan_in))`.
    HeUniform {
        fan_in: usize,
        gain: f64,
    },
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

/// Ordered parameter declarations collected while an architecture is built.
#[derive(Clone, Debug, Default)]
pub struct ParamLayout {
    decls: Vec<ParamDecl>,
}

impl ParamLayout {
    pub fn declare(&mut self, name: String, shape: Shape, init: Init) -> ParamId {
        debug_assert!(self.decls.iter().all(|d| d.name != name), "duplicate param {name}");
        self.decls.push(ParamDecl { name, shape, init });
        ParamId(self.decls.len() - 1)
    }

    pub fn decls(&self) -> &[ParamDecl] {
        &self.decls
    }

    pub fn len(&self) -> usize {
        self.decls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decls.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.decls.iter().map(|d| d.shape.len()).sum()
    }

    /// Seeded initialization. `slope` is the activation's negative slope.
    pub fn init<T: Real>(&self, seed: u64, slope: f64) -> ModelParams<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .decls
            .iter()
            .map(|d| match d.init {
                Init::Zeros => Tensor::zeros(d.shape),
                Init::HeUniform { fan_in, gain } => {
                    let b = gain * (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt();
                    Tensor::from_fn(d.shape, |_, _, _| T::of(rng.random_range(-b..b)))
                }
            })
            .collect();
        ModelParams::from_parts(self.decls.iter().map(|d| d.name.clone()).collect(), tensors).expect("unique names")
    }

    /// Checks that `params` has exactly this layout's names and shapes.
    pub fn check<T: Real>(&self, params: &ModelParams<T>) -> Result<()> {
        ensure!(
            params.len() == self.decls.len(),
            "parameter count {} does not match architecture ({})",
            params.len(),
            self.decls.len()
        );
        for (d, (name, t)) in self.decls.iter().zip(params.iter()) {
            ensure!(d.name == name, "parameter {name:?} found where {:?} was expected", d.name);
            ensure!(
                d.shape == t.shape(),
                "parameter {name:?} has shape {} but architecture needs {}",
                t.shape(),
                d.shape
            );
        }
        Ok(())
    }
}

/// Learnable tensors in declaration order, addressable by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ModelParams<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        ensure!(names.len() == tensors.len(), "name/tensor count mismatch");
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            ensure!(index.insert(n.clone(), i).is_none(), "duplicate parameter name {n:?}");
        }
        Ok(ModelParams { names, tensors, index })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Element at flat coordinate `i` across all tensors in order.
    pub fn flat_get(&self, mut i: usize) -> T {
        for t in &self.tensors {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn flat_set(&mut self, mut i: usize, v: T) {
        for t in &mut self.tensors {
            if i < t.len() {
                t.data_mut()[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.names == other.names && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bit_eq(b))
    }

    /// Places every parameter on `g` as a learnable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<BoundParams> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
        Ok(BoundParams { vars })
    }
}

/// Graph handles of a [`ModelParams`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
