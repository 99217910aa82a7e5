//! File formats, dataset loading, and command workflows around
//! [`chemtext_core`].
//!
//! - [`vocab_file`]: the tab-separated vocabulary listing.
//! - [`checkpoint`]: the checksummed binary parameter container.
//! - [`container`]: model and explainer files (metadata plus checkpoint).
//! - [`dataset`]: CSV ingestion with drop accounting.
//! - [`reports`]: JSON, CSV, and JSON-lines outputs, including the
//!   resumable trial ledger.
//! - [`config`]: the run configuration shared by every command.
//! - [`commands`]: encode, train, eval, hpo, and explain.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod reports;
pub mod vocab_file;

mod error;

pub use error::{Error, FormatError, Result};
