//! Network architecture: parameter layout and the shared forward program.

use rand::Rng;

use super::{CdVaeConfig, ModelError, Result, Variant};
use crate::ndiff::{
    mlp_forward_tape, mlp_init, Activation, BoundParams, MlpArch, NodeId, ParamSet, Scalar, Tape,
    Tensor,
};

/// Resolved shapes of encoder and decoder for one config/observation pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelArch {
    pub obs_dim: usize,
    pub latent_dim: usize,
    pub n_conf: usize,
    pub encoder: MlpArch,
    pub decoder: MlpArch,
}

impl ModelArch {
    pub fn resolve(cfg: &CdVaeConfig, obs_dim: usize) -> Result<ModelArch> {
        cfg.validate()?;
        let nc = cfg.effective_n_conf();
        let d = cfg.latent_dim;
        let (enc_in, enc_out) = match cfg.variant {
            // Label one-hot joins the encoder input; single Gaussian head.
            Variant::Cvae => (obs_dim + nc, 2 * d),
            // One Gaussian head per component plus the assignment head.
            _ => (obs_dim, nc * 2 * d + 2 * nc),
        };
        let (dec_in, dec_out) = match cfg.variant {
            Variant::Cvae => (d + nc, obs_dim),
            Variant::Classifier => (d, cfg.n_classes),
            _ => (d, obs_dim),
        };
        let mut enc_sizes = vec![enc_in];
        enc_sizes.extend(&cfg.enc_hidden);
        enc_sizes.push(enc_out);
        let mut dec_sizes = vec![dec_in];
        dec_sizes.extend(&cfg.dec_hidden);
        dec_sizes.push(dec_out);
        Ok(ModelArch {
            obs_dim,
            latent_dim: d,
            n_conf: nc,
            encoder: MlpArch::new(enc_sizes, Activation::Tanh),
            decoder: MlpArch::new(dec_sizes, Activation::Tanh),
        })
    }

    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> Result<ParamSet<T>> {
        let mut params = ParamSet::new();
        mlp_init(&mut params, "enc", &self.encoder, rng)?;
        mlp_init(&mut params, "dec", &self.decoder, rng)?;
        Ok(params)
    }
}

/// Log-variance clamp bounds for all Gaussian heads.
pub(crate) const LOGVAR_LO: f64 = -10.0;
pub(crate) const LOGVAR_HI: f64 = 10.0;

/// Tape nodes of the encoder heads for one batch.
pub(crate) struct EncoderNodes {
    /// Per-component mean heads, each `[B, D]`.
    pub mu: Vec<NodeId>,
    /// Per-component clamped log-variance heads, each `[B, D]`.
    pub logvar: Vec<NodeId>,
    /// Assignment mean head `[B, n_conf]`.
    pub pi_mu: NodeId,
    /// Assignment clamped log-sigma head `[B, n_conf]`.
    pub pi_logsig: NodeId,
}

/// Run the encoder trunk and slice the heads.
/// `x` is `[B, obs_dim]` (already concatenated with the label one-hot for
/// the conditional variant).
pub(crate) fn encode_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    arch: &ModelArch,
    variant: Variant,
    x: NodeId,
) -> Result<EncoderNodes> {
    let h = mlp_forward_tape(tape, bound, "enc", x, &arch.encoder)?;
    let d = arch.latent_dim;
    let nc = arch.n_conf;
    let lo = T::c(LOGVAR_LO);
    let hi = T::c(LOGVAR_HI);

    if variant == Variant::Cvae {
        let batch = tape.value(x).dims2()?.0;
        let mu = tape.slice_cols(h, 0, d)?;
        let lv_raw = tape.slice_cols(h, d, d)?;
        let lv = tape.clamp(lv_raw, lo, hi)?;
        // Single head; zero logits give a deterministic unit assignment.
        let zeros = tape.constant(Tensor::zeros(vec![batch, 1]));
        return Ok(EncoderNodes { mu: vec![mu], logvar: vec![lv], pi_mu: zeros, pi_logsig: zeros });
    }

    let mut mu = Vec::with_capacity(nc);
    let mut logvar = Vec::with_capacity(nc);
    for c in 0..nc {
        let m = tape.slice_cols(h, c * 2 * d, d)?;
        let lv_raw = tape.slice_cols(h, c * 2 * d + d, d)?;
        logvar.push(tape.clamp(lv_raw, lo, hi)?);
        mu.push(m);
    }
    let pi_mu = tape.slice_cols(h, nc * 2 * d, nc)?;
    let pi_logsig_raw = tape.slice_cols(h, nc * 2 * d + nc, nc)?;
    let pi_logsig = tape.clamp(pi_logsig_raw, lo, hi)?;
    Ok(EncoderNodes { mu, logvar, pi_mu, pi_logsig })
}

/// Reparameterization: `z = mu + exp(logvar / 2) * eps`.
pub(crate) fn reparam_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    mu: NodeId,
    logvar: NodeId,
    eps: NodeId,
) -> Result<NodeId> {
    let half_lv = tape.scale(logvar, T::c(0.5))?;
    let sigma = tape.exp(half_lv)?;
    let noise = tape.mul(sigma, eps)?;
    Ok(tape.add(mu, noise)?)
}

/// Evaluated encoder heads for a batch, in `f64` regardless of the
/// training scalar type.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub batch: usize,
    pub latent_dim: usize,
    pub n_conf: usize,
    /// `mu[c]` is row-major `[B, D]`.
    pub mu: Vec<Vec<f64>>,
    pub logvar: Vec<Vec<f64>>,
    /// Row-major `[B, n_conf]`.
    pub pi_mu: Vec<f64>,
    pub pi_logsig: Vec<f64>,
}

impl EncoderOutput {
    /// Assignment weights at evaluation (mean logits, no sampling).
    pub fn pi_weights(&self, policy: super::PiPolicy) -> Vec<f64> {
        let nc = self.n_conf;
        let mut out = vec![0.0; self.batch * nc];
        for b in 0..self.batch {
            let row = &self.pi_mu[b * nc..(b + 1) * nc];
            match policy {
                super::PiPolicy::Softmax => {
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for (j, &v) in row.iter().enumerate() {
                        let e = (v - mx).exp();
                        out[b * nc + j] = e;
                        s += e;
                    }
                    for j in 0..nc {
                        out[b * nc + j] /= s;
                    }
                }
                super::PiPolicy::PaperL2 => {
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    for (j, &v) in row.iter().enumerate() {
                        out[b * nc + j] = v / norm;
                    }
                }
            }
        }
        out
    }

    /// Evaluation-time latent codes: assignment-weighted component means.
    pub fn aggregate_mean(&self, policy: super::PiPolicy) -> Vec<f64> {
        let weights = self.pi_weights(policy);
        let (d, nc) = (self.latent_dim, self.n_conf);
        let mut z = vec![0.0; self.batch * d];
        for b in 0..self.batch {
            for c in 0..nc {
                let w = weights[b * nc + c];
                for i in 0..d {
                    z[b * d + i] += w * self.mu[c][b * d + i];
                }
            }
        }
        z
    }
}

pub(crate) fn wrong_variant(expected: Variant, actual: Variant) -> ModelError {
    ModelError::WrongVariant { expected, actual }
}
