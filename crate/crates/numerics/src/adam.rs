use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::params::ParamStore;
use crate::real::Real;

/// Adam with bias correction. Moment buffers are laid out like the store
/// they were created for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdamState<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        Self::with_hyper(store, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<T>> = store
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.numel()])
            .collect();
        Self {
            lr: T::c(lr),
            beta1: T::c(beta1),
            beta2: T::c(beta2),
            eps: T::c(eps),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Applies one update from the gradients currently held by `store`, then
    /// zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        store.check_grads()?;
        if store.len() != self.m.len()
            || store
                .tensors()
                .iter()
                .zip(&self.m)
                .any(|(t, m)| t.numel() != m.len())
        {
            return shape_err("adam_step", "optimizer state does not match parameters");
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((param, m), v) in store.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = param.grad().expect("checked").to_vec();
            for (((p, g), mi), vi) in param
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * *g;
                *vi = b2 * *vi + (T::one() - b2) * *g * *g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            param.zero_grad();
        }
        Ok(())
    }
}
