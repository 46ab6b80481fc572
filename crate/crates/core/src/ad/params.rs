use crate::error::{Error, Result};

use super::{Array, Real};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Tensor<F> {
    pub name: String,
    pub value: Array<F>,
}

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<F>) -> ParamId {
        self.tensors.push(Tensor { name: name.into(), value });
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array<F> {
        &self.tensors[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<F> {
        &mut self.tensors[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.tensors[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Zero-filled arrays matching every tensor's shape.
    pub fn zeros_like(&self) -> Vec<Array<F>> {
        self.tensors.iter().map(|t| Array::zeros(t.value.shape())).collect()
    }

    /// Overwrites one tensor, checking the shape.
    pub fn set(&mut self, id: ParamId, value: Array<F>) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {} expects shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor { name: t.name.clone(), value: t.value.cast() })
                .collect(),
        }
    }
}
