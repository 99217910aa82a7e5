use serde::{Deserialize, Serialize};

use super::Real;

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Sigmoid,
    Relu,
    Selu,
    Softplus,
    Tanh,
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Linear => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Selu => {
                let l = T::from_f64(SELU_LAMBDA);
                if x > T::zero() {
                    l * x
                } else {
                    l * T::from_f64(SELU_ALPHA) * x.exp_m1()
                }
            }
            Activation::Softplus => x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// Derivative at input `x` with output `y = apply(x)`.
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Selu => {
                let l = T::from_f64(SELU_LAMBDA);
                if x > T::zero() {
                    l
                } else {
                    y + l * T::from_f64(SELU_ALPHA)
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        assert!((Activation::Softplus.apply(0.0f64) - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(Activation::Selu.apply(0.0f64), 0.0);
        let eps = 1e-12;
        let left: f64 = Activation::Selu.apply(-eps);
        let right: f64 = Activation::Selu.apply(eps);
        assert!(left.abs() < 1e-11 && right.abs() < 1e-11);
        assert_eq!(Activation::Linear.apply(3.5f64), 3.5);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        // no overflow in the tails
        assert!(Activation::Softplus.apply(1000.0f64).is_finite());
        assert_eq!(Activation::Sigmoid.apply(-1000.0f64), 0.0);
    }
}
