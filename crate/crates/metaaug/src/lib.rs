//! Sample-aware data augmentation policy learning.
//!
//! A small task classifier trains on loss-reweighted augmented images while a
//! policy network learns, by analytic meta-gradients on a validation set,
//! which transformation/image pairs deserve weight; a transformation sampler
//! concentrates future draws on transformations the policy rates highly.
//!
//! Module map:
//! - [`nn`]: dense layers, per-sample losses/gradients, momentum SGD;
//! - [`augment`]: the 14 image processing functions, pair composition, and
//!   the 28-dim transformation embedding;
//! - [`policy`]: the two-branch weight network and its manual gradients;
//! - [`sampler`]: the rolling-average transformation distribution;
//! - [`trainer`]: the three-phase alternating loop and transfer training;
//! - [`verify`]: finite-difference oracles and convergence monitors;
//! - [`dataset`], [`config`], [`checkpoint`], [`rng`]: the harness.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
