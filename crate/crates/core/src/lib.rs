//! Automatic modulation recognition with a phase-estimating CNN-GRU
//! classifier.
//!
//! - [`nn`]: tensors, layers with explicit backward passes, Adam,
//!   finite-difference checks, `.pcgd` checkpoints.
//! - [`pet`]: the phase estimator and the inverse rotation.
//! - [`model`]: the full network, its classifier-only ablation and exact
//!   parameter accounting.
//! - [`pruning`]: cubic sparsity schedule and per-tensor magnitude masks.
//! - [`datagen`]: modulators, the baseband channel and `.amrd` datasets.
//! - [`pipeline`]: splitting, training, per-SNR evaluation, ablation and
//!   constellation export.

pub mod datagen;
pub mod error;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod pet;
pub mod pipeline;
pub mod pruning;
pub mod rng;

pub use error::{Error, Result};
pub use model::{count_params, Model, ModelSpec, Variant};
