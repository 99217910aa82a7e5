//! Character-level property models for SMILES strings.
//!
//! The crate is `no_std` (with `alloc`) so the numerical pieces can be embedded
//! anywhere; file formats, dataset loading, and the command line live in the
//! companion `chemtext` crate.
//!
//! Layout:
//!
//! - [`codec`]: vocabulary, fixed-width encoding, SMILES sanity checks, and the
//!   hydrophilic/hydrophobic character classes used to score attributions.
//! - [`nn`]: a small reverse-mode autodiff tape with exactly the layers the
//!   models need (embedding, conv1d, GRU, LSTM, dense, batch norm), the
//!   losses, RMSprop/Adam, and a finite-difference gradient checker.
//! - [`model`]: the four recurrent architecture classes and inference.
//! - [`data`]: labeled records, test/fold partitioning, and minority
//!   oversampling.
//! - [`train`]: the supervised protocol with early stopping, cross validation,
//!   and the AUC/RMSE metrics.
//! - [`hpo`]: Gaussian-process Bayesian search over the discrete design grid.
//! - [`explain`]: the explanation-mask network and top-k attribution scoring.
//!
//! Scalars are generic over [`nn::Real`] (`f32` for training, `f64` for
//! gradient checks and determinism audits).

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x >= 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod codec;
pub mod data;
pub mod explain;
pub mod hpo;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;
pub mod train;

mod error;

pub use error::{Error, Result};
