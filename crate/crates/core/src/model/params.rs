use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named parameter tensors in a fixed insertion order.
///
/// The order is part of the checkpoint layout and of the optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(())
    }

    pub(crate) fn insert_normal(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut impl Rng,
    ) -> Result<()> {
        let t = Tensor::from_fn(shape, |_| T::lit(rng.sample::<f64, _>(StandardNormal)));
        self.insert(name, t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.tensors[self.position(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let i = self.position(name)?;
        Ok(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Places every tensor on `tape`, as trainable leaves or as constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams<'_, T> {
        let ids = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundParams { set: self, ids }
    }

    /// Associates existing tape nodes with this set, in parameter order.
    pub fn bind(&self, ids: &[NodeId]) -> Result<BoundParams<'_, T>> {
        if ids.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "{} nodes for {} parameters",
                ids.len(),
                self.tensors.len()
            )));
        }
        Ok(BoundParams {
            set: self,
            ids: ids.to_vec(),
        })
    }
}

/// Tape node ids for a [`ParamSet`], addressable by parameter name.
#[derive(Debug)]
pub struct BoundParams<'a, T: Scalar> {
    set: &'a ParamSet<T>,
    ids: Vec<NodeId>,
}

impl<T: Scalar> BoundParams<'_, T> {
    pub fn node(&self, name: &str) -> Result<NodeId> {
        Ok(self.ids[self.set.position(name)?])
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Gradient tensors for this set, in parameter order.
    pub fn collect_grads(&self, grads: &crate::autodiff::Gradients<T>) -> Result<Vec<Tensor<T>>> {
        self.ids
            .iter()
            .map(|&id| {
                grads
                    .wrt(id)
                    .cloned()
                    .ok_or_else(|| Error::Contract("parameter not trainable on this tape".into()))
            })
            .collect()
    }
}
