use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// `None` until a backward pass reaches the parameter after the last `zero_grad`.
    pub grad: Option<Tensor<T>>,
}

/// Named, ordered collection of trainable tensors.
///
/// Registration order is stable and defines checkpoint layout.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Usage(format!("parameter `{name}` registered twice")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// `grad += delta`, creating the buffer on first use.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != delta.shape() {
            return Err(TensorError::shape("accumulate_grad", p.value.shape(), delta.shape()));
        }
        match &mut p.grad {
            Some(g) => g.add_assign(delta),
            None => p.grad = Some(delta.clone()),
        }
        Ok(())
    }

    /// Global L2 norm of all present gradients.
    pub fn grad_norm(&self) -> T {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm && norm > T::zero() {
            let scale = max_norm / norm;
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
        }
        norm
    }

    /// Copies values into another precision; gradients are dropped.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(store.add("w", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros(&[3])).unwrap();
        let ones = Tensor::ones(&[3]);
        store.accumulate_grad(id, &ones).unwrap();
        store.accumulate_grad(id, &ones).unwrap();
        assert_eq!(store.grad(id).unwrap().data(), &[2.0, 2.0, 2.0]);
        store.zero_grad();
        assert!(store.grad(id).is_none());
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::zeros(&[1])).unwrap();
        let b = store.add("b", Tensor::zeros(&[1])).unwrap();
        store.accumulate_grad(a, &Tensor::full(&[1], 3.0)).unwrap();
        store.accumulate_grad(b, &Tensor::full(&[1], 4.0)).unwrap();
        assert_eq!(store.clip_grad_norm(1.0), 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }
}
