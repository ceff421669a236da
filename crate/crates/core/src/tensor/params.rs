// SPDX-License-Identifier: MIT OR Apache-2.0

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a learned tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learned tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Gradients of a scalar loss with respect to every parameter of a store.
/// Parameters the loss does not depend on have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when the loss ignores it.
    pub fn get_or_zeros(&self, id: ParamId, like: &Tensor<F>) -> Tensor<F> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: Tensor<F>) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// `self += scale * other`, entry by entry.
    pub fn add_scaled(&mut self, other: &Gradients<F>, scale: F) -> Result<()> {
        if other.grads.len() != self.grads.len() {
            return Err(Error::dim("gradients", "parameter count mismatch"));
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, &b) in m.data_mut().iter_mut().zip(theirs.data()) {
                        *a += scale * b;
                    }
                }
                None => {
                    let mut t = theirs.clone();
                    t.scale_assign(scale);
                    *mine = Some(t);
                }
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> F {
        self.grads
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|&x| x * x)
            .sum::<F>()
            .sqrt()
    }
}
