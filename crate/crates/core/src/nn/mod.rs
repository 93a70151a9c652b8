//! Neural-network building blocks on top of the autodiff tape: a central
//! parameter store, layers, the Adam optimizer and checkpoint IO.

pub mod adam;
pub mod layers;
pub mod losses;
pub mod store_io;

use ndarray::IxDyn;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;
use crate::Arr;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Owns every trainable array of a model, keyed by a stable name.
///
/// Layers hold [`ParamId`]s; before each step the store is bound onto a
/// fresh tape (trainable or frozen), and the optimizer writes updates back
/// through the same ids. Checkpointing is a dump of the store.
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Arr<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Arr<S>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate param name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Arr<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Arr<S> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arr<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Bind every parameter onto `tape` as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.param(v.clone())).collect() }
    }

    /// Bind every parameter as a constant (frozen model).
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.constant(v.clone())).collect() }
    }

    /// Replace all values with `other`'s (shapes must match by position).
    pub fn load_values(&mut self, values: Vec<Arr<S>>) {
        assert_eq!(values.len(), self.values.len(), "param count mismatch");
        for (slot, v) in self.values.iter_mut().zip(values) {
            assert_eq!(slot.shape(), v.shape(), "param shape mismatch");
            *slot = v;
        }
    }
}

/// Tape bindings of a [`ParamStore`] for one forward/backward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Gaussian with He scaling (std = sqrt(2/fan_in)); relu-style nets.
    HeNormal { fan_in: usize },
    /// Plain Gaussian; DCGAN-style choice for GAN convolutions.
    Normal { std: f64 },
    Zeros,
    Ones,
}

pub fn init_array<S: Scalar>(rng: &mut impl Rng, shape: &[usize], init: Init) -> Arr<S> {
    match init {
        Init::Zeros => Arr::zeros(IxDyn(shape)),
        Init::Ones => Arr::from_elem(IxDyn(shape), S::one()),
        Init::HeNormal { fan_in } => {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            Arr::from_shape_fn(IxDyn(shape), |_| S::of(dist.sample(rng)))
        }
        Init::Normal { std } => {
            let dist = Normal::new(0.0, std).unwrap();
            Arr::from_shape_fn(IxDyn(shape), |_| S::of(dist.sample(rng)))
        }
    }
}
