//! Named parameter storage and gradient maps.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::graph::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One trainable tensor. `group` names the partition it belongs to
/// (e.g. an encoder or the fusion block) so that gradients and optimizer
/// updates can be masked per partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: String,
    pub value: Matrix,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            group: group.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, group: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, group, Array2::zeros((rows, cols)))
    }

    /// Glorot-uniform initialisation.
    pub fn glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let value = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, group, value)
    }

    pub fn normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let value = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, group, value)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in_group<'a>(&'a self, group: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter().filter(move |(_, p)| p.group == group).map(|(id, _)| id)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Sparse map from parameter to accumulated gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_map(grads: BTreeMap<ParamId, Matrix>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().map(|(&id, g)| (id, g))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (&id, g) in &other.grads {
            match self.grads.get_mut(&id) {
                Some(existing) => *existing += g,
                None => {
                    self.grads.insert(id, g.clone());
                }
            }
        }
    }

    /// Overwrites every gradient belonging to `group` with zeros.
    pub fn zero_group(&mut self, store: &ParamStore, group: &str) {
        for (id, g) in self.grads.iter_mut() {
            if store.get(*id).group == group {
                g.fill(0.0);
            }
        }
    }

    /// True when no gradient of `group` holds a nonzero entry.
    pub fn group_is_zero(&self, store: &ParamStore, group: &str) -> bool {
        self.grads
            .iter()
            .filter(|(id, _)| store.get(**id).group == group)
            .all(|(_, g)| g.iter().all(|&x| x == 0.0))
    }

    /// Gradients restricted to one group, for snapshot comparisons.
    pub fn restricted(&self, store: &ParamStore, group: &str) -> Gradients {
        let grads = self
            .grads
            .iter()
            .filter(|(id, _)| store.get(**id).group == group)
            .map(|(&id, g)| (id, g.clone()))
            .collect();
        Gradients { grads }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|x| x.is_finite()))
    }
}
