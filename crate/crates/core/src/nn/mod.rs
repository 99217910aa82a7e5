//! Minimal reverse-mode autodiff for the recurrent property models.

mod activation;
mod gradcheck;
mod graph;
pub mod init;
mod ops;
mod optim;
mod params;
pub(crate) mod real;
mod recurrent;
mod tensor;

pub use activation::Activation;
pub use gradcheck::{grad_check, FD_STEP};
pub use graph::{BatchNormMode, BatchStats, Gradients, Graph, RnnVars, Var};
pub use ops::BCE_CLAMP;
pub use optim::{Adam, AdamConfig, Optimizer, Rmsprop, RmspropConfig};
pub use params::{Param, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
