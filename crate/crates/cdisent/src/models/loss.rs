//! Loss programs, recorded per batch on the tape.

use super::net::{encode_on_tape, reparam_on_tape, ModelArch};
use super::{CdVaeConfig, ModelError, PiPolicy, Result, Variant};
use crate::ndiff::{mlp_forward_tape, BoundParams, NodeId, Scalar, Tape, Tensor};

/// One batch of inputs already lifted into tensors. Noise tensors are zero
/// at evaluation time, which collapses the sampled paths onto their means.
pub(crate) struct BatchInput<T> {
    /// `[B, obs_dim]`.
    pub x: Tensor<T>,
    /// Confounder labels, one per row, each `< n_conf`.
    pub conf: Vec<usize>,
    /// Task labels (classifier variant only).
    pub task: Vec<usize>,
    /// Per-component reparameterization noise, each `[B, D]`.
    pub eps_z: Vec<Tensor<T>>,
    /// Assignment-head noise `[B, n_conf]`.
    pub eps_pi: Tensor<T>,
}

/// Nodes of interest after recording one batch.
pub(crate) struct LossNodesInternal {
    pub total: NodeId,
    pub fit: NodeId,
    pub cls: NodeId,
    pub kl: NodeId,
    pub ioss: Option<NodeId>,
    /// Decoder output `[B, obs_dim]` or class logits `[B, n_classes]`.
    pub dec_out: NodeId,
    pub encoder: super::net::EncoderNodes,
}

fn onehot<T: Scalar>(labels: &[usize], card: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); labels.len() * card];
    for (i, &l) in labels.iter().enumerate() {
        data[i * card + l] = T::one();
    }
    Tensor::new(vec![labels.len(), card], data).expect("one-hot shape")
}

/// Record the full forward pass and loss for one batch.
pub(crate) fn build_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    cfg: &CdVaeConfig,
    arch: &ModelArch,
    batch: &BatchInput<T>,
) -> Result<LossNodesInternal> {
    let b = batch.x.dims2()?.0;
    let nc = arch.n_conf;
    if batch.conf.len() != b {
        return Err(ModelError::DataMismatch(format!("{} labels for batch of {b}", batch.conf.len())));
    }
    if let Some(&bad) = batch.conf.iter().find(|&&c| c >= nc) {
        return Err(ModelError::DataMismatch(format!(
            "confounder label {bad} outside model's {nc} values"
        )));
    }

    let x = tape.constant(batch.x.clone());
    let enc_in = if cfg.variant == Variant::Cvae {
        let oh = tape.constant(onehot::<T>(&batch.conf, nc));
        tape.concat_cols(x, oh)?
    } else {
        x
    };
    let enc = encode_on_tape(tape, bound, arch, cfg.variant, enc_in)?;

    // Reparameterize each component and aggregate.
    let mut z_comps = Vec::with_capacity(enc.mu.len());
    for (c, (&mu, &lv)) in enc.mu.iter().zip(&enc.logvar).enumerate() {
        let eps = tape.constant(batch.eps_z[c].clone());
        z_comps.push(reparam_on_tape(tape, mu, lv, eps)?);
    }

    let (z, cls) = if cfg.variant == Variant::Cvae {
        // No assignment machinery; the classification slot is fixed at zero.
        let zero = tape.constant(Tensor::scalar(T::zero())?);
        (z_comps[0], zero)
    } else {
        // Sampled assignment logits.
        let eps_pi = tape.constant(batch.eps_pi.clone());
        let pi_logits = reparam_on_tape(tape, enc.pi_mu, enc.pi_logsig, eps_pi)?;
        let weights = match cfg.pi_policy {
            PiPolicy::Softmax => tape.softmax_rows(pi_logits)?,
            PiPolicy::PaperL2 => {
                let sq = tape.square(pi_logits)?;
                let norm2 = tape.sum_axis1(sq)?;
                let norm = tape.sqrt(norm2)?;
                tape.div_col(pi_logits, norm)?
            }
        };
        // z = sum_c w_c * z_c.
        let mut agg = None;
        for (c, &zc) in z_comps.iter().enumerate() {
            let wc2d = tape.slice_cols(weights, c, 1)?;
            let wc = tape.sum_axis1(wc2d)?; // [B]
            let weighted = tape.mul_col(zc, wc)?;
            agg = Some(match agg {
                None => weighted,
                Some(prev) => tape.add(prev, weighted)?,
            });
        }
        // Cross-entropy of the assignment weights against the label.
        let logw = tape.log(weights)?;
        let picked = tape.pick_cols(logw, batch.conf.clone())?;
        let mean_logp = tape.mean_all(picked)?;
        let cls = tape.neg(mean_logp)?;
        (agg.expect("at least one component"), cls)
    };

    // Decode (or classify) the aggregated latent.
    let dec_in = if cfg.variant == Variant::Cvae {
        let oh = tape.constant(onehot::<T>(&batch.conf, nc));
        tape.concat_cols(z, oh)?
    } else {
        z
    };
    let dec_out = mlp_forward_tape(tape, bound, "dec", dec_in, &arch.decoder)?;

    let fit = if cfg.is_classifier() {
        if batch.task.len() != b {
            return Err(ModelError::DataMismatch(format!(
                "{} task labels for batch of {b}",
                batch.task.len()
            )));
        }
        let probs = tape.softmax_rows(dec_out)?;
        let logp = tape.log(probs)?;
        let picked = tape.pick_cols(logp, batch.task.clone())?;
        let mean_logp = tape.mean_all(picked)?;
        tape.neg(mean_logp)?
    } else {
        let diff = tape.sub(dec_out, x)?;
        let sq = tape.square(diff)?;
        tape.mean_all(sq)?
    };

    // Per-component variance-only KL (full KL with the mean term for the
    // conditional variant), averaged over the batch, summed over components.
    let mut kl_total = None;
    for (c, &lv) in enc.logvar.iter().enumerate() {
        let var = tape.exp(lv)?;
        let vm = tape.sub(var, lv)?; // v - log v
        let core = tape.add_const(vm, -T::one())?; // v - log v - 1
        let with_mean = if cfg.variant == Variant::Cvae {
            let musq = tape.square(enc.mu[c])?;
            tape.add(core, musq)?
        } else {
            core
        };
        let per_row = tape.sum_axis1(with_mean)?;
        let half = tape.scale(per_row, T::c(0.5))?;
        let klc = tape.mean_all(half)?;
        kl_total = Some(match kl_total {
            None => klc,
            Some(prev) => tape.add(prev, klc)?,
        });
    }
    let kl = kl_total.expect("at least one component");

    let ioss = if cfg.variant == Variant::CdvaeIoss {
        Some(ioss_surrogate_on_tape(tape, z, b)?)
    } else {
        None
    };

    // total = l_rec * fit + l_cls * cls + beta * l_kl * kl (+ l_ioss * ioss)
    let wfit = tape.scale(fit, T::c(cfg.lambda_rec))?;
    let wcls = tape.scale(cls, T::c(cfg.lambda_cls))?;
    let wkl = tape.scale(kl, T::c(cfg.effective_beta() * cfg.lambda_kl))?;
    let mut total = tape.add(wfit, wcls)?;
    total = tape.add(total, wkl)?;
    if let Some(io) = ioss {
        let wio = tape.scale(io, T::c(cfg.lambda_ioss))?;
        total = tape.add(total, wio)?;
    }

    Ok(LossNodesInternal { total, fit, cls, kl, ioss, dec_out, encoder: enc })
}

/// Grid resolution per axis of the pairwise support estimate.
const IOSS_GRID: usize = 6;
/// Kernel bandwidth as a fraction of one grid cell.
const IOSS_TAU_CELLS: f64 = 0.75;
/// Grid half-range in standardized units (a smooth stand-in for the 1%/99%
/// quantile box).
const IOSS_HALF_RANGE: f64 = 2.0;

/// Differentiable support-coverage penalty on a latent batch `[B, D]`.
///
/// Each dimension is standardized with batch statistics; for every ordered
/// pair of dimensions a `IOSS_GRID x IOSS_GRID` grid spans plus/minus
/// `IOSS_HALF_RANGE` standard units, each cell's occupancy is the maximum
/// Gaussian kernel weight any sample puts on its center, and the penalty is
/// one minus mean occupancy, averaged over pairs. Zero-ish when the joint
/// support fills the box, large when samples concentrate on a
/// lower-dimensional set.
fn ioss_surrogate_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    z: NodeId,
    batch: usize,
) -> Result<NodeId> {
    if batch < 32 {
        return Err(ModelError::BatchTooSmall(batch));
    }
    let (b, d) = tape.value(z).dims2()?;
    if d < 2 {
        return Err(ModelError::BadConfig("support regularizer needs D >= 2".into()));
    }

    // Standardize: (z - mean) / sqrt(var + 1e-8).
    let mean = tape.mean_axis0(z)?;
    let neg_mean = tape.neg(mean)?;
    let centered = tape.add_row(z, neg_mean)?;
    let sq = tape.square(centered)?;
    let var = tape.mean_axis0(sq)?;
    let var_eps = tape.add_const(var, T::c(1e-8))?;
    let std = tape.sqrt(var_eps)?;
    let zs = tape.div_row(centered, std)?;

    // Cell centers along one axis.
    let cell = 2.0 * IOSS_HALF_RANGE / IOSS_GRID as f64;
    let tau = IOSS_TAU_CELLS * cell;
    let inv2tau2 = 1.0 / (2.0 * tau * tau);
    let centers: Vec<f64> =
        (0..IOSS_GRID).map(|k| -IOSS_HALF_RANGE + (k as f64 + 0.5) * cell).collect();
    let n_cells = IOSS_GRID * IOSS_GRID;
    let mut cx = Vec::with_capacity(n_cells);
    let mut cy = Vec::with_capacity(n_cells);
    for &a in &centers {
        for &bc in &centers {
            cx.push(a);
            cy.push(bc);
        }
    }
    let cx_row =
        tape.constant(Tensor::new(vec![n_cells], cx.iter().map(|&v| T::c(v)).collect())?);
    let cy_row =
        tape.constant(Tensor::new(vec![n_cells], cy.iter().map(|&v| T::c(v)).collect())?);

    let mut acc = None;
    let mut pairs = 0usize;
    for i in 0..d {
        for j in i + 1..d {
            let zi2 = tape.slice_cols(zs, i, 1)?;
            let zi = tape.sum_axis1(zi2)?; // [B]
            let zj2 = tape.slice_cols(zs, j, 1)?;
            let zj = tape.sum_axis1(zj2)?;

            // Squared distances [B, cells] via column/row broadcasts.
            let zeros = tape.constant(Tensor::zeros(vec![b, n_cells]));
            let xi = tape.add_col(zeros, zi)?; // row b repeats z_i[b]
            let neg_cx = tape.neg(cx_row)?;
            let dx = tape.add_row(xi, neg_cx)?;
            let yj = tape.add_col(zeros, zj)?;
            let neg_cy = tape.neg(cy_row)?;
            let dy = tape.add_row(yj, neg_cy)?;
            let dx2 = tape.square(dx)?;
            let dy2 = tape.square(dy)?;
            let d2 = tape.add(dx2, dy2)?;
            let neg = tape.scale(d2, T::c(-inv2tau2))?;
            let k = tape.exp(neg)?;
            let occ = tape.max_axis0(k)?; // [cells]
            let cover2 = tape.sum_all(occ)?;
            let coverage = tape.scale(cover2, T::c(1.0 / n_cells as f64))?;
            let one_minus = tape.neg(coverage)?;
            let pair_val = tape.add_const(one_minus, T::one())?;
            acc = Some(match acc {
                None => pair_val,
                Some(prev) => tape.add(prev, pair_val)?,
            });
            pairs += 1;
        }
    }
    let total = acc.expect("D >= 2 gives at least one pair");
    Ok(tape.scale(total, T::c(1.0 / pairs as f64))?)
}

/// Check the full loss gradient of a model variant against central finite
/// differences in 64-bit on a random batch. Returns the max relative error
/// over every parameter entry.
pub fn loss_grad_check(
    cfg: &CdVaeConfig,
    obs_dim: usize,
    batch: usize,
    seed: u64,
    eps: f64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    let arch = ModelArch::resolve(cfg, obs_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: crate::ndiff::ParamSet<f64> = arch.init_params(&mut rng)?;

    let x: Vec<f64> = (0..batch * obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let conf: Vec<usize> = (0..batch).map(|_| rng.random_range(0..arch.n_conf)).collect();
    let task: Vec<usize> = (0..batch)
        .map(|_| rng.random_range(0..cfg.n_classes.max(2)))
        .collect();
    let eps_z: Vec<Tensor<f64>> = (0..arch.n_conf)
        .map(|_| {
            let e: Vec<f64> =
                (0..batch * arch.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            Tensor::new(vec![batch, arch.latent_dim], e).expect("noise shape")
        })
        .collect();
    let eps_pi_data: Vec<f64> =
        (0..batch * arch.n_conf).map(|_| StandardNormal.sample(&mut rng)).collect();
    let batch_in = BatchInput {
        x: Tensor::new(vec![batch, obs_dim], x)?,
        conf,
        task,
        eps_z,
        eps_pi: Tensor::new(vec![batch, arch.n_conf], eps_pi_data)?,
    };

    let err = crate::ndiff::grad_check(
        |tape, bound| {
            let nodes = build_loss(tape, bound, cfg, &arch, &batch_in)
                .map_err(|e| crate::ndiff::NdiffError::InvalidArgument(e.to_string()))?;
            Ok(nodes.total)
        },
        &params,
        eps,
    )?;
    Ok(err)
}

/// Standalone evaluation of the support surrogate on a plain latent batch
/// (no gradients kept).
pub fn ioss_surrogate_value(z: &[f64], batch: usize, dim: usize) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let zt = tape.constant(Tensor::new(vec![batch, dim], z.to_vec())?);
    let node = ioss_surrogate_on_tape(&mut tape, zt, batch)?;
    Ok(tape.value(node).item()?)
}
