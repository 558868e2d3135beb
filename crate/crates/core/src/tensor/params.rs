use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub type Mat = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named parameter tensors. Every tensor is a row-major 2-D matrix; vectors
/// are stored as `1 × n`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Mat::zeros((rows, cols)))
    }

    pub fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.insert(name, Mat::ones((rows, cols)))
    }

    pub fn normal<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut R) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let m = Mat::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.insert(name, m)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Replaces every tensor from `other`, which must have identical names
    /// and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<(), Error> {
        if other.names != self.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.dim() != src.dim() {
                return Err(Error::Checkpoint("parameter shapes differ".into()));
            }
            dst.assign(src);
        }
        Ok(())
    }

    /// Overwrites a tensor by name, rejecting shape mismatches.
    pub fn set(&mut self, name: &str, value: Mat) -> Result<(), Error> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
        let dst = &mut self.values[id.0];
        if dst.dim() != value.dim() {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: expected shape {:?}, found {:?}",
                dst.dim(),
                value.dim()
            )));
        }
        *dst = value;
        Ok(())
    }
}

/// Gradient accumulator aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads {
    values: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Self { values: vec![None; store.len()] }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Mat) {
        match &mut self.values[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.values[id.0].as_ref()
    }

    pub fn merge(&mut self, other: Grads) {
        for (i, g) in other.values.into_iter().enumerate() {
            if let Some(g) = g {
                match &mut self.values[i] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.values.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}
