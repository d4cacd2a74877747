//! Named parameter storage, initialization, and graph binding.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Shape, Tensor, Var};

/// How a freshly created parameter is filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal with the given standard deviation, resampled beyond two deviations.
    TruncNormal(f64),
    /// Uniform in `±1/sqrt(fan_in)`, fan-in taken from `c * h * w` of the weight.
    FanInUniform,
}

impl Init {
    pub fn tensor<T: Scalar, R: Rng + ?Sized>(self, shape: Shape, rng: &mut R) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::TruncNormal(std) => {
                let data = (0..shape.numel())
                    .map(|_| loop {
                        let z: f64 = StandardNormal.sample(rng);
                        if z.abs() <= 2.0 {
                            break T::lit(z * std);
                        }
                    })
                    .collect();
                Tensor::from_vec(shape, data).unwrap()
            }
            Init::FanInUniform => {
                let bound = 1.0 / ((shape.c * shape.h * shape.w) as f64).sqrt();
                let data = (0..shape.numel())
                    .map(|_| T::lit(rng.random_range(-bound..=bound)))
                    .collect();
                Tensor::from_vec(shape, data).unwrap()
            }
        }
    }
}

/// Parameters keyed by dotted path, iterated in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn init<R: Rng + ?Sized>(&mut self, name: impl Into<String>, shape: Shape, init: Init, rng: &mut R) {
        self.insert(name, init.tensor(shape, rng));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Usage(format!("no parameter named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("no parameter named {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count over every buffer.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Register every tensor as a graph leaf. Trainable leaves carry their
    /// name so non-finite values can be traced back to a parameter.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bindings {
        self.bind_prefix(g, "", trainable)
    }

    /// Like [`ParamStore::bind`], restricted to names under `prefix`.
    pub fn bind_prefix(&self, g: &mut Graph<T>, prefix: &str, trainable: bool) -> Bindings {
        let vars = self
            .tensors
            .iter()
            .filter(|(name, _)| {
                prefix.is_empty() || name.strip_prefix(prefix).is_some_and(|r| r.starts_with('.'))
            })
            .map(|(name, t)| {
                let v = if trainable {
                    g.named_param(name, t.clone())
                } else {
                    g.input(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bindings { vars }
    }
}

/// Graph variables for a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("parameter {name:?} is not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn scope(&self, prefix: &str) -> Scope<'_> {
        Scope {
            bindings: self,
            prefix: prefix.to_string(),
        }
    }

    /// Gradients of every bound parameter, zero-filled where none reached it.
    pub fn grads<T: Scalar>(&self, g: &Graph<T>) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let grad = g
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.shape(v)));
                (name.clone(), grad)
            })
            .collect()
    }
}

/// A view of [`Bindings`] under a dotted name prefix.
#[derive(Clone, Debug)]
pub struct Scope<'a> {
    bindings: &'a Bindings,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn at(&self, child: &str) -> Scope<'a> {
        Scope {
            bindings: self.bindings,
            prefix: join(&self.prefix, child),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.bindings.var(&join(&self.prefix, name))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.bindings.vars.get(&join(&self.prefix, name)).copied()
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
