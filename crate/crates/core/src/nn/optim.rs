//! RMSprop and Adam.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Real, Tensor};
use crate::{Error, Result};

pub trait Optimizer<T: Real> {
    /// Applies one update; `grads[i]` belongs to parameter slot `i`.
    fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()>;

    fn learning_rate(&self) -> f64;

    fn set_learning_rate(&mut self, lr: f64);
}

fn check_shapes<T: Real>(params: &ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "optimizer",
            alloc::format!("{} params, {} grads", params.len(), grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer",
                alloc::format!("{}: {:?} vs grad {:?}", p.name, p.value.shape(), g.shape()),
            ));
        }
    }
    Ok(())
}

fn zeros_like<T: Real>(params: &ParamStore<T>) -> Vec<Vec<T>> {
    params.iter().map(|p| vec![T::zero(); p.value.len()]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// `acc = rho * acc + (1 - rho) * g^2; theta -= lr * g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone)]
pub struct Rmsprop<T> {
    pub config: RmspropConfig,
    acc: Vec<Vec<T>>,
}

impl<T: Real> Rmsprop<T> {
    pub fn new(config: RmspropConfig) -> Self {
        Self {
            config,
            acc: Vec::new(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<T>] {
        &self.acc
    }
}

impl<T: Real> Optimizer<T> for Rmsprop<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        check_shapes(params, grads)?;
        if self.acc.is_empty() {
            self.acc = zeros_like(params);
        }
        let lr = T::from_f64(self.config.learning_rate);
        let rho = T::from_f64(self.config.rho);
        let eps = T::from_f64(self.config.epsilon);
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.acc) {
            for ((w, &gi), a) in p.value.data_mut().iter_mut().zip(g.data()).zip(acc) {
                *a = rho * *a + (T::one() - rho) * gi * gi;
                *w -= lr * gi / (a.sqrt() + eps);
            }
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }
}

impl<T: Real> Optimizer<T> for Adam<T> {
    fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        check_shapes(params, grads)?;
        if self.m.is_empty() {
            self.m = zeros_like(params);
            self.v = zeros_like(params);
        }
        self.step += 1;
        let c = &self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let bc1 = T::from_f64(1.0 - libm::pow(c.beta1, self.step as f64));
        let bc2 = T::from_f64(1.0 - libm::pow(c.beta2, self.step as f64));
        let lr = T::from_f64(c.learning_rate);
        let eps = T::from_f64(c.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }
}
