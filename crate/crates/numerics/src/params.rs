use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{NumericsError, Result};
use crate::real::Real;
use crate::rng::Rng;
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_STORE.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named trainable tensors. A graph binds to one store; gradients from
/// `Graph::backward_into` land in the tensors' `grad` buffers.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ParamStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    #[serde(skip, default = "fresh_uid")]
    uid: u64,
}

impl<T: Real> Clone for ParamStore<T> {
    /// Clones get their own identity: a graph built over the original does
    /// not accept the copy.
    fn clone(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.clone(),
            uid: fresh_uid(),
        }
    }
}

/// Stores compare by names, shapes and values; gradient buffers are ignored.
impl<T: Real> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape() && a.data() == b.data())
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            uid: fresh_uid(),
        }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
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

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::clear_grad);
    }

    /// Fails with the first parameter that has no gradient buffer.
    pub fn check_grads(&self) -> Result<()> {
        for (name, t) in self.names.iter().zip(&self.tensors) {
            if t.grad().is_none() {
                return Err(NumericsError::MissingGrad(name.clone()));
            }
        }
        Ok(())
    }

    /// Global L2 norm of all gradients (missing buffers count as zero).
    pub fn grad_norm(&self) -> T {
        self.tensors
            .iter()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            for t in &mut self.tensors {
                if let Some(g) = t.grad_mut() {
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }

    /// Hash of every parameter's name, shape and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Copies every value (not gradients) from `other`, which must have the
    /// same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names
            || self
                .tensors
                .iter()
                .zip(&other.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(NumericsError::Shape {
                op: "copy_values_from",
                detail: "parameter layouts differ".into(),
            });
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            uid: fresh_uid(),
        }
    }
}

/// He-style initialisation: zero-mean normal with std `gain * sqrt(2 / fan_in)`.
pub fn he_normal<T: Real>(rng: &mut Rng, shape: &[usize], fan_in: usize, gain: f64) -> Tensor<T> {
    let std = gain * (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::c(std * rng.normal()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_tracks_values() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", Tensor::full(&[2, 2], 0.5));
        let c0 = s.checksum();
        assert_eq!(c0, s.clone().checksum());
        s.get_mut(id).data_mut()[0] = 0.25;
        assert_ne!(c0, s.checksum());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::zeros(&[2]));
        s.get_mut(id).accumulate_grad(&[3.0, 4.0]);
        let n = s.clip_grad_norm(1.0);
        assert_eq!(n, 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_grad_is_reported() {
        let mut s = ParamStore::<f64>::new();
        s.add("bias", Tensor::zeros(&[1]));
        assert_eq!(
            s.check_grads(),
            Err(NumericsError::MissingGrad("bias".into()))
        );
    }
}
