//! Few-step diffusion samplers on 2-D toy distributions, fine-tuned against an
//! adversarially trained critic with policy-gradient estimators.
//!
//! The library is organized around six pieces:
//!
//! * [`nn`] — dense f64 MLPs, a reverse-mode tape, Adam, timestep embeddings,
//!   finite-difference gradient checking, and a binary checkpoint format.
//! * [`diffusion`] — noise schedules, forward marginals, posterior and
//!   predicted means, epsilon-matching pretraining, and trajectory sampling.
//! * [`adversary`] — critic and baseline networks with their objectives:
//!   the mean-difference gap, a gradient penalty, and the baseline regression.
//! * [`gradients`] — the three generator gradient estimators (pathwise,
//!   policy gradient, policy gradient with a learned baseline) plus clipping.
//! * [`finetune`] — the replay buffer, training configuration, pretraining,
//!   and the alternating critic/generator fine-tuning loop.
//! * [`evalkit`] — toy datasets, exact and entropic Wasserstein-2 solvers,
//!   the evaluation protocol, and SVG figure emission.
//!
//! Every runnable capability has a corresponding example under `examples/`;
//! start with `cargo run --release -p sftpg --example sampling_paths`. The
//! thin `sftpg` binary wires the same entry points into subcommands
//! (`pretrain`, `finetune`, `eval`, `gradcheck`, `compare-estimators`).
//!
//! All numerics are f64. Training is deterministic for a fixed configuration
//! and seed: RNG streams are ChaCha-based and derived from the config seed,
//! and reductions run in a fixed order.

pub mod adversary;
pub mod checks;
pub mod diffusion;
mod error;
pub mod evalkit;
pub mod finetune;
pub mod gradients;
pub mod nn;

pub use error::{Error, Result};
