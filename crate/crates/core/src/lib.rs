//! Deterministic simulator for federated learning with noisy labels.
//!
//! Clients hold Gaussian-blob data whose labels are partly corrupted. Each
//! round the server broadcasts a model and a shared two-component loss
//! mixture; clients split their data into clean and noisy parts, relabel
//! confident noisy samples, keep the samples on which the global and
//! de-biased local predictions agree, and train with MixUp. The server
//! averages models and per-client mixtures.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod log;
pub mod metrics;
pub mod noise_filter;
pub mod orchestrator;
pub mod partition;
pub mod pcs;
pub mod rng;

pub use config::{PartitionMode, RunConfig, Variant};
pub use error::{Error, Result};
pub use orchestrator::{Execution, Experiment, RunOutput};
