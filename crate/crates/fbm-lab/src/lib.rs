//! Desk-scale zero-shot reinforcement learning with behaviour foundation models.
//!
//! This crate implements forward-backward (FB) representations, their
//! memory-augmented variant (FB-M), frame-stacking and universal-successor-feature
//! baselines, partially observable environment wrappers, offline dataset tooling,
//! and an evaluation protocol built around interquartile means with bootstrap
//! confidence intervals. Everything runs on two desk-scale environments (a
//! discrete gridworld and a continuous point-mass) small enough that every
//! learnable quantity can be checked against exact ground truth.
//!
//! The main subsystems:
//!
//! - [`envgen`] — environments, task reward families, occlusion and dynamics wrappers
//! - [`autodiff`] — dense-tensor reverse-mode differentiation, Adam, checkpoints
//! - [`memory`] — GRU, frame-stack, and last-observation trajectory encoders
//! - [`bfm`] — the FB / FB-M / FB-stack / USF-M model family, losses, task inference
//! - [`data`] — offline reward-free datasets, slicing, labelled sets
//! - [`oracle`] — exact successor measures, value iteration, belief expansion
//! - [`trainer`] — the actor-critic training loop
//! - [`evalkit`] — rollouts, IQM aggregation, failure-mode harness, reports
//! - [`cli`] — the `fbm-lab` command-line entry point
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod autodiff;
pub mod bfm;
pub mod cli;
pub mod config;
pub mod data;
pub mod envgen;
pub mod error;
pub mod evalkit;
pub mod memory;
pub mod oracle;
pub mod rng;
pub mod trainer;
pub mod util;

pub use error::{FbmError, Result};
