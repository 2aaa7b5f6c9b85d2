//! Latent-variable models over confounded datasets.
//!
//! The central model encodes each observation into one Gaussian head per
//! confounder value plus a soft-assignment head, reparameterizes each
//! component, aggregates them with the normalized assignment weights, and
//! decodes the aggregate. Its loss combines reconstruction, assignment
//! cross-entropy against the confounder label, and a variance-only KL that
//! pulls every component's covariance towards the identity — mean-free, so
//! statistical independence is only enforced within label strata, never
//! globally.
//!
//! Baselines reuse the same machinery: the vanilla VAE and the beta-VAE are
//! the one-component degenerate case (their assignment loss is identically
//! zero), the conditional VAE concatenates the label one-hot and keeps the
//! usual full KL, and classifier variants replace the decoder with a class
//! head for the downstream-shift studies. An optional regularizer penalizes
//! latent batches whose pairwise supports do not fill their bounding grid.

mod loss;
mod net;
mod train;

pub use loss::{ioss_surrogate_value, loss_grad_check};
pub use net::{EncoderOutput, ModelArch};
pub use train::{train, TrainedModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ndiff::{AdamConfig, NdiffError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("dataset/config mismatch: {0}")]
    DataMismatch(String),
    #[error("operation requires variant {expected}, model is {actual}")]
    WrongVariant { expected: Variant, actual: Variant },
    #[error("batch of {0} is too small for the support regularizer (needs >= 32)")]
    BatchTooSmall(usize),
    #[error(transparent)]
    Numeric(#[from] NdiffError),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("checkpoint sidecar: {0}")]
    Sidecar(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Mixture-latent model conditioned on the confounder label set.
    Cdvae,
    /// Vanilla VAE: the one-component degenerate case.
    Vae,
    /// VAE with a KL multiplier (one component).
    BetaVae,
    /// Conditional VAE: label one-hot concatenated to encoder and decoder
    /// inputs, single Gaussian head, full KL to the standard normal.
    Cvae,
    /// Cdvae plus the independent-support regularizer on the latent batch.
    CdvaeIoss,
    /// Cdvae backbone with the decoder replaced by a classifier head.
    Classifier,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Cdvae => "cdvae",
            Variant::Vae => "vae",
            Variant::BetaVae => "beta-vae",
            Variant::Cvae => "cvae",
            Variant::CdvaeIoss => "cdvae-ioss",
            Variant::Classifier => "classifier",
        };
        f.write_str(s)
    }
}

/// How raw assignment logits become mixture weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiPolicy {
    /// Softmax over sampled logits: a simplex, standard cross-entropy.
    #[default]
    Softmax,
    /// Unit-L2 normalization of the raw logits. Kept selectable for
    /// fidelity experiments; the weights then square-sum to one instead of
    /// summing to one, and the cross-entropy clamps non-positive entries.
    PaperL2,
}

/// Model and training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdVaeConfig {
    pub variant: Variant,
    /// Latent dimension per component.
    pub latent_dim: usize,
    /// Number of confounder label values the model conditions on.
    pub n_conf: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    /// KL multiplier (the beta-VAE knob; 1.0 elsewhere).
    pub beta: f64,
    pub lambda_rec: f64,
    pub lambda_cls: f64,
    pub lambda_kl: f64,
    pub lambda_ioss: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub pi_policy: PiPolicy,
    /// Classifier variant: which factor column is the task label.
    pub task_factor: usize,
    /// Classifier variant: number of task classes.
    pub n_classes: usize,
}

impl Default for CdVaeConfig {
    fn default() -> Self {
        CdVaeConfig {
            variant: Variant::Cdvae,
            latent_dim: 8,
            n_conf: 4,
            enc_hidden: vec![64],
            dec_hidden: vec![48],
            beta: 1.0,
            lambda_rec: 1.0,
            lambda_cls: 1.0,
            lambda_kl: 1.0,
            lambda_ioss: 0.0,
            adam: AdamConfig::default(),
            epochs: 25,
            batch_size: 128,
            seed: 0,
            pi_policy: PiPolicy::Softmax,
            task_factor: 0,
            n_classes: 0,
        }
    }
}

impl CdVaeConfig {
    /// Component count the variant actually trains with: the plain and
    /// beta VAEs are single-component by definition.
    pub fn effective_n_conf(&self) -> usize {
        match self.variant {
            Variant::Vae | Variant::BetaVae => 1,
            _ => self.n_conf,
        }
    }

    /// KL multiplier after folding in the variant.
    pub fn effective_beta(&self) -> f64 {
        match self.variant {
            Variant::BetaVae => self.beta,
            _ => 1.0,
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.variant == Variant::Classifier
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(ModelError::BadConfig("latent_dim must be >= 1".into()));
        }
        if self.n_conf == 0 {
            return Err(ModelError::BadConfig("n_conf must be >= 1".into()));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lambda_rec", self.lambda_rec),
            ("lambda_cls", self.lambda_cls),
            ("lambda_kl", self.lambda_kl),
            ("lambda_ioss", self.lambda_ioss),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(ModelError::BadConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if self.batch_size < 2 {
            return Err(ModelError::BadConfig("batch_size must be >= 2".into()));
        }
        if self.is_classifier() && self.n_classes < 2 {
            return Err(ModelError::BadConfig("classifier variant needs n_classes >= 2".into()));
        }
        if self.variant == Variant::CdvaeIoss && self.lambda_ioss <= 0.0 {
            return Err(ModelError::BadConfig("cdvae-ioss needs lambda_ioss > 0".into()));
        }
        Ok(())
    }
}

/// Scalar loss parts of one step or one epoch. The total is the weighted
/// sum of the parts by construction; `check_identity` re-verifies it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Reconstruction MSE, or task cross-entropy for classifier variants.
    pub fit: f64,
    /// Assignment cross-entropy against the confounder label.
    pub cls: f64,
    /// Summed per-component KL.
    pub kl: f64,
    pub ioss: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        LossBreakdown { total: 0.0, fit: 0.0, cls: 0.0, kl: 0.0, ioss: 0.0 }
    }

    pub fn check_identity(&self, cfg: &CdVaeConfig) -> Result<()> {
        let expected = cfg.lambda_rec * self.fit
            + cfg.lambda_cls * self.cls
            + cfg.effective_beta() * cfg.lambda_kl * self.kl
            + cfg.lambda_ioss * self.ioss;
        if (expected - self.total).abs() > 1e-6 * (1.0 + expected.abs()) {
            return Err(ModelError::BadConfig(format!(
                "loss identity violated: total {} vs weighted parts {}",
                self.total, expected
            )));
        }
        Ok(())
    }

    fn add(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.fit += other.fit;
        self.cls += other.cls;
        self.kl += other.kl;
        self.ioss += other.ioss;
    }

    fn scaled(mut self, s: f64) -> Self {
        self.total *= s;
        self.fit *= s;
        self.cls *= s;
        self.kl *= s;
        self.ioss *= s;
        self
    }

    /// Mean of a nonempty sequence of breakdowns.
    pub fn mean_of(parts: &[LossBreakdown]) -> LossBreakdown {
        let mut acc = LossBreakdown::zero();
        for p in parts {
            acc.add(p);
        }
        acc.scaled(1.0 / parts.len().max(1) as f64)
    }
}
