use std::collections::HashMap;

use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};

/// Handle to an entry of a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named matrices in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    values: Vec<Matrix>,
    lookup: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.values.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Glorot-uniform weight in `[-√(6/(fan_in+fan_out)), +√(…)]`.
    pub fn insert_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        self.insert(name, Matrix::from_vec(fan_in, fan_out, data)?)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// A zero matrix per entry, same names and shapes.
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            lookup: self.lookup.clone(),
        }
    }

    pub(crate) fn matches_layout(&self, other: &ParameterSet) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// ∂loss/∂parameter for every entry of a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet(pub(crate) ParameterSet);

impl GradientSet {
    pub fn zeros_for(params: &ParameterSet) -> Self {
        GradientSet(params.zeros_like())
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        self.0.get(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.0.by_name(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.0.iter()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        self.0.get_mut(id).add_assign(g);
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for id in self.0.ids().collect::<Vec<_>>() {
            self.0.get_mut(id).add_assign(other.0.get(id));
        }
    }

    pub fn scale(&mut self, s: f64) {
        for id in self.0.ids().collect::<Vec<_>>() {
            for v in self.0.get_mut(id).data_mut() {
                *v *= s;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.values.iter().all(|m| m.data().iter().all(|&v| v == 0.0))
    }

    pub fn as_parameter_set(&self) -> &ParameterSet {
        &self.0
    }
}
