use crate::autograd::{Graph, NodeId, ParamId};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Named trainable arrays. Ids are indices in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    decay: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. `decay` marks it for weight decay.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.decay.push(decay);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<f64>)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i), self.names[i].as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Errors unless `other` has the same names and shapes in the same order.
    pub fn check_same_structure(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} parameters, or differing names",
                self.len(),
                other.len()
            )));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if a.dim() != b.dim() {
                return Err(Error::StructureMismatch(format!(
                    "{}: {:?} vs {:?}",
                    self.names[i],
                    a.dim(),
                    b.dim()
                )));
            }
        }
        Ok(())
    }
}

/// How a forward pass reads parameters: as trainable graph leaves or as
/// constants (for momentum copies and frozen evaluation).
#[derive(Clone, Copy)]
pub enum Weights<'a> {
    Train(&'a ParamStore),
    Frozen(&'a ParamStore),
}

impl<'a> Weights<'a> {
    pub fn node(&self, g: &mut Graph, id: ParamId) -> NodeId {
        match self {
            Weights::Train(s) => g.param(id, s.get(id)),
            Weights::Frozen(s) => g.constant(s.get(id).clone()),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        match self {
            Weights::Train(s) | Weights::Frozen(s) => s,
        }
    }
}

/// Truncated-at-2σ normal initializer.
pub fn trunc_normal(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_shape_fn((rows, cols), |_| loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 {
            break v * std;
        }
    })
}

/// Xavier-uniform initializer for a `fan_in x fan_out` matrix.
pub fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a))
}
