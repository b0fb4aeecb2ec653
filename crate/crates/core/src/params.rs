//! Named learnable parameters and their gradient buffers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether decoupled weight decay applies (weights yes; biases, norms and
    /// temperatures no).
    pub decay: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
            decay,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, p: Parameter) -> ParamId {
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        let value = Tensor::new(shape, data).expect("positive extents");
        self.add(Parameter::new(name, value, true))
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64, decay: bool) -> ParamId {
        self.add(Parameter::new(name, Tensor::full(shape, value), decay))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != g.shape() {
            return Err(Error::shape("accumulate_grad", p.grad.shape(), g.shape()));
        }
        for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }

    /// Replaces every parameter value with the same-named one from `other`.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Incompatible(format!("parameter `{}` missing", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter `{}`: expected shape {:?}, found {:?}",
                    p.name,
                    p.value.shape(),
                    src.value.shape()
                )));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_clears_everything() {
        let mut s = ParamStore::new();
        let a = s.add_const("a", vec![3], 1.0, true);
        s.accumulate(a, &Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(s.grad(a).data(), &[1.0, 2.0, 3.0]);
        s.zero_grads();
        assert!(s.grad(a).data().iter().all(|&g| g == 0.0));
        assert_eq!(s.grad(a).shape(), s.value(a).shape());
    }
}
