//! Adam with bias correction.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("adam", &[params.len()], &[grads.len()]));
        }
        self.step += 1;
        let c = self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let correction1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let correction2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let lr_t = T::from_f64_lossy(c.lr / correction1);
        let sqrt_c2 = T::from_f64_lossy(libm::sqrt(correction2));
        let eps = T::from_f64_lossy(c.eps);
        for (i, (param, grad)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
            if param.shape() != grad.shape() {
                return Err(Error::shape("adam", param.shape(), grad.shape()));
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                *p -= lr_t * m[j] / (v[j].sqrt() / sqrt_c2 + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * sign(g).
        let mut params = ParamStore::<f64>::new();
        params.add("w", Tensor::new(&[2], alloc::vec![1.0, -1.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let grads = [Tensor::new(&[2], alloc::vec![0.5, -3.0]).unwrap()];
        adam.step(&mut params, &grads).unwrap();
        let w = params.tensors()[0].data();
        assert!((w[0] - (1.0 - 1e-4)).abs() < 1e-9);
        assert!((w[1] - (-1.0 + 1e-4)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = ParamStore::<f64>::new();
        params.add("w", Tensor::new(&[1], alloc::vec![3.0]).unwrap());
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &params,
        );
        for _ in 0..500 {
            let w = params.tensors()[0].data()[0];
            let g = [Tensor::new(&[1], alloc::vec![2.0 * w]).unwrap()];
            adam.step(&mut params, &g).unwrap();
        }
        assert!(params.tensors()[0].data()[0].abs() < 1e-2);
    }
}
