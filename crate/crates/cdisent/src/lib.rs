//! Desk-scale confounded disentanglement: exact discrete-SCM oracles, a
//! confounded synthetic data generator, mixture-of-Gaussians latent algebra,
//! cdVAE-style models trained with a tape-based reverse-mode differentiator,
//! and a causal disentanglement metric suite.
//!
//! Modules:
//!
//! - [`ndiff`] — dense tensors, reverse-mode differentiation, Adam, gradient
//!   checking and the `CDPT` parameter checkpoint format.
//! - [`scm`] — exact discrete structural causal models, graph-surgery
//!   interventions and backdoor adjustment over a label set.
//! - [`datagen`] — procedural confounded datasets (tabular and small images)
//!   with ground-truth factors, confounder labels and shift-severity splits.
//! - [`gaussmix`] — Gaussian conditional algebra, per-component KL terms and
//!   the first-moment interventional discrepancy of mixture latents.
//! - [`models`] — cdVAE and baselines (VAE, beta-VAE, cVAE, classifier
//!   variants) plus the minibatch training loop.
//! - [`metrics`] — IOSS, IRS, UC, CG, DCI disentanglement, MIC/TIC and
//!   reconstruction error.
//! - [`harness`] — experiment orchestration: dataset generation, training
//!   grids, OOD and label-set ablations, CSV/JSON reporting.

pub mod datagen;
pub mod gaussmix;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod ndiff;
pub mod scm;
pub mod stats;
