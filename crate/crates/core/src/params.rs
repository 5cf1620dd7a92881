//! Named trainable parameters shared by layers across forward passes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a parameter. Names must be unique within a store.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        self.add_with(name, value, true)
    }

    pub fn add_with(
        &mut self,
        name: impl Into<String>,
        value: Tensor<S>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Param {
            name,
            value,
            grad,
            trainable,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Global L2 norm over the gradients of trainable parameters.
    pub fn grad_norm(&self) -> S {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.sq_norm())
            .sum::<S>()
            .sqrt()
    }

    /// Snapshot of every parameter value, in registration order.
    pub fn values(&self) -> Vec<Tensor<S>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces values from a snapshot taken with [`ParamStore::values`].
    pub fn set_values(&mut self, values: Vec<Tensor<S>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    op: "set_values",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }
}
