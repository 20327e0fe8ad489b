//! Named parameter storage shared by the model, optimizer and checkpoints.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor. Non-trainable entries hold buffers such as batch-norm
/// running statistics.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Round every value to the nearest `f32`, the storage precision of
/// parameters and checkpoints.
pub fn quantize_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        quantize_f32(tensor.data_mut());
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(ParamTensor { name, tensor, trainable });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    /// Mutable access to a parameter's values. Callers must keep values
    /// `f32`-representable (see [`quantize_f32`]).
    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].tensor.data_mut()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamTensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn num_trainable_values(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    /// Overwrite the values of `name`, checking shape agreement.
    pub fn assign(&mut self, name: &str, shape: Shape, values: Vec<f64>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter name '{name}'")))?;
        let slot = &mut self.params[id.0].tensor;
        if slot.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' has shape {:?}, checkpoint stores {shape:?}",
                slot.shape()
            )));
        }
        let mut t = Tensor::from_vec(shape, values)?;
        quantize_f32(t.data_mut());
        *slot = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(Shape::scalar()), true).unwrap();
        assert!(store.add("w", Tensor::zeros(Shape::scalar()), true).is_err());
    }

    #[test]
    fn values_are_stored_at_f32_precision() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.1), true).unwrap();
        assert_eq!(store.get(id).tensor.data()[0], 0.1f32 as f64);
    }
}
