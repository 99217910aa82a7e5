//! Seeded weight initializers.

use rand::Rng;

use super::{Real, Tensor};

/// Uniform on `[-limit, limit]`.
pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-limit..=limit)))
}

/// Glorot/Xavier uniform: `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    uniform(shape, limit, rng)
}

/// LeCun uniform: `limit = sqrt(3 / fan_in)`, unit-variance preserving for SELU.
pub fn lecun_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    uniform(shape, libm::sqrt(3.0 / fan_in as f64), rng)
}
