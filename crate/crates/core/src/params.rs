//! Named, ordered collections of trainable arrays.

use indexmap::IndexMap;
use rand::Rng;

use crate::autograd::{Grads, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    FanIn { gain: f64 },
    Const(f64),
}

/// Name, shape and initializer of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Shape, init: Init) -> Self {
        ParamSpec { name: name.into(), shape, init }
    }

    /// A `[cout, cin, k, k]` kernel with fan-in initialization.
    pub fn conv(name: impl Into<String>, cout: usize, cin: usize, k: usize, gain: f64) -> Self {
        ParamSpec::new(name, Shape::new(cout, cin, k, k), Init::FanIn { gain })
    }

    pub fn vector(name: impl Into<String>, len: usize, value: f64) -> Self {
        ParamSpec::new(name, Shape::new(1, 1, 1, len), Init::Const(value))
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        ParamSpec::new(name, Shape::scalar(), Init::Const(value))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { entries: IndexMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn init<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::default();
        for spec in specs {
            let t = match spec.init {
                Init::FanIn { gain } => {
                    let fan_in = (spec.shape.c * spec.shape.h * spec.shape.w).max(1);
                    Tensor::randn(spec.shape, gain / (fan_in as f64).sqrt(), rng)
                }
                Init::Const(v) => Tensor::full(spec.shape, T::of(v)),
            };
            store.insert(spec.name.clone(), t)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Checks names and shapes against the specs, in order.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.entries.len()
            )));
        }
        for spec in specs {
            let t = self
                .get(&spec.name)
                .ok_or_else(|| Error::Shape(format!("missing parameter {}", spec.name)))?;
            if t.shape() != spec.shape {
                return Err(Error::Shape(format!(
                    "parameter {} has shape {}, expected {}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Wraps every array in a graph leaf.
    pub fn vars(&self, requires_grad: bool) -> ParamVars<T> {
        ParamVars {
            vars: self.entries.iter().map(|(k, v)| (k.clone(), Var::leaf(v.clone(), requires_grad))).collect(),
        }
    }
}

/// Graph leaves for a [`ParamStore`], looked up by name during a forward pass.
pub struct ParamVars<T: Scalar> {
    vars: IndexMap<String, Var<T>>,
}

impl<T: Scalar> ParamVars<T> {
    pub fn get(&self, name: &str) -> &Var<T> {
        self.vars.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Var<T>> {
        self.vars.get(name)
    }

    /// Collects the gradient of every parameter (zeros where none flowed).
    pub fn gradients(&self, grads: &mut Grads<T>) -> IndexMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(v.shape()));
                (k.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_follows_specs() {
        let specs = vec![
            ParamSpec::conv("a.weight", 4, 2, 3, 1.0),
            ParamSpec::vector("a.bias", 4, 0.0),
            ParamSpec::scalar("gamma", 1.0),
        ];
        let store = ParamStore::<f64>::init(&specs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(store.num_scalars(), 72 + 4 + 1);
        assert_eq!(store.get("gamma").unwrap().item(), 1.0);
        assert!(store.get("a.bias").unwrap().data().iter().all(|&v| v == 0.0));
        store.validate(&specs).unwrap();
        assert!(store.validate(&specs[..2]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let specs = vec![ParamSpec::scalar("x", 0.0), ParamSpec::scalar("x", 1.0)];
        assert!(ParamStore::<f32>::init(&specs, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
