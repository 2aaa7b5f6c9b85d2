//! Minibatch training loop and the trained-model evaluation surface.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::loss::{build_loss, BatchInput};
use super::net::{wrong_variant, EncoderOutput, ModelArch};
use super::{CdVaeConfig, LossBreakdown, ModelError, Result, Variant};
use crate::datagen::LabeledDataset;
use crate::ndiff::{
    adam_step, backward, load_params, save_params, AdamState, ParamSet, Scalar, Tape, Tensor,
};

/// A trained model: architecture, final parameters and loss history.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: CdVaeConfig,
    pub arch: ModelArch,
    pub params: ParamSet<f32>,
    /// Per-epoch mean loss breakdowns.
    pub history: Vec<LossBreakdown>,
    /// Training aborted on a non-finite loss; parameters are the last
    /// epoch-end checkpoint.
    pub diverged: bool,
}

fn gather_batch<T: Scalar>(
    ds: &LabeledDataset,
    idx: &[usize],
    cfg: &CdVaeConfig,
    arch: &ModelArch,
    noise_rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchInput<T>> {
    let b = idx.len();
    let w = ds.obs_len();
    let mut xdata = Vec::with_capacity(b * w);
    let mut conf = Vec::with_capacity(b);
    let mut task = Vec::with_capacity(b);
    for &i in idx {
        xdata.extend(ds.observation(i).iter().map(|&v| T::c(v as f64)));
        conf.push(ds.conf[i] as usize);
        if cfg.is_classifier() {
            task.push(ds.factor_row(i)[cfg.task_factor] as usize);
        }
    }
    let x = Tensor::new(vec![b, w], xdata)?;

    let (nc, d) = (arch.n_conf, arch.latent_dim);
    let (eps_z, eps_pi) = match noise_rng {
        Some(rng) => {
            // Draw order is fixed: components in order, then the assignment
            // head. Keeps trajectories reproducible across runs.
            let mut eps_z = Vec::with_capacity(nc);
            for _ in 0..nc {
                let e: Vec<T> = (0..b * d)
                    .map(|_| {
                        let v: f64 = StandardNormal.sample(rng);
                        T::c(v)
                    })
                    .collect();
                eps_z.push(Tensor::new(vec![b, d], e)?);
            }
            let e: Vec<T> = (0..b * nc)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    T::c(v)
                })
                .collect();
            (eps_z, Tensor::new(vec![b, nc], e)?)
        }
        None => (
            (0..nc).map(|_| Tensor::zeros(vec![b, d])).collect(),
            Tensor::zeros(vec![b, nc]),
        ),
    };
    Ok(BatchInput { x, conf, task, eps_z, eps_pi })
}

fn validate_dataset(cfg: &CdVaeConfig, ds: &LabeledDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(ModelError::DataMismatch("empty dataset".into()));
    }
    let nc = cfg.effective_n_conf();
    if nc > 1 && ds.max_conf_label() >= nc {
        return Err(ModelError::DataMismatch(format!(
            "dataset has confounder labels up to {}, model conditions on {nc}",
            ds.max_conf_label()
        )));
    }
    if cfg.is_classifier() {
        if cfg.task_factor >= ds.n_factors {
            return Err(ModelError::DataMismatch(format!(
                "task factor {} outside dataset's {} factors",
                cfg.task_factor, ds.n_factors
            )));
        }
        let max_label =
            (0..ds.len()).map(|i| ds.factor_row(i)[cfg.task_factor]).max().unwrap_or(0) as usize;
        if max_label >= cfg.n_classes {
            return Err(ModelError::DataMismatch(format!(
                "task labels reach {max_label}, classifier has {} classes",
                cfg.n_classes
            )));
        }
    }
    Ok(())
}

/// Train a model on `train_ds`. Deterministic in `config.seed`: parameter
/// init, batch shuffling and reparameterization noise all derive from it.
pub fn train(config: &CdVaeConfig, train_ds: &LabeledDataset) -> Result<TrainedModel> {
    config.validate()?;
    validate_dataset(config, train_ds)?;
    let arch = ModelArch::resolve(config, train_ds.obs_len())?;

    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let init_seed = master.random::<u64>();
    let shuffle_seed = master.random::<u64>();
    let noise_seed = master.random::<u64>();

    let mut init_rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut params: ParamSet<f32> = arch.init_params(&mut init_rng)?;
    let mut opt = AdamState::new(&params, config.adam);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);

    let n = train_ds.len();
    let bsz = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut snapshot = params.clone();
    let mut diverged = false;

    'epochs: for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut parts = Vec::new();
        // Trailing partial batch is dropped; every step sees `bsz` rows.
        for chunk in order.chunks_exact(bsz) {
            let batch = gather_batch::<f32>(train_ds, chunk, config, &arch, Some(&mut noise_rng))?;
            let step = run_step(config, &arch, &mut params, &mut opt, &batch);
            match step {
                Ok(bd) => parts.push(bd),
                Err(err) => {
                    log::warn!("training diverged (epoch {epoch}): {err}; restoring last epoch checkpoint");
                    params = snapshot;
                    diverged = true;
                    history.push(LossBreakdown::mean_of(&parts));
                    break 'epochs;
                }
            }
        }
        let epoch_mean = LossBreakdown::mean_of(&parts);
        epoch_mean.check_identity(config)?;
        history.push(epoch_mean);
        snapshot = params.clone();
    }

    let model = TrainedModel { config: config.clone(), arch, params, history, diverged };
    model.log_variance_sanity(train_ds);
    Ok(model)
}

fn run_step(
    config: &CdVaeConfig,
    arch: &ModelArch,
    params: &mut ParamSet<f32>,
    opt: &mut AdamState<f32>,
    batch: &BatchInput<f32>,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let bound = tape.bind_params(params);
    let nodes = build_loss(&mut tape, &bound, config, arch, batch)?;
    let bd = LossBreakdown {
        total: tape.value(nodes.total).item()? as f64,
        fit: tape.value(nodes.fit).item()? as f64,
        cls: tape.value(nodes.cls).item()? as f64,
        kl: tape.value(nodes.kl).item()? as f64,
        ioss: nodes.ioss.map(|io| tape.value(io).item().unwrap_or(f32::NAN) as f64).unwrap_or(0.0),
    };
    backward(&tape, nodes.total, &bound, params)?;
    adam_step(params, opt)?;
    Ok(bd)
}

impl TrainedModel {
    /// Forward-evaluate one batch of observations (no sampling) and return
    /// the encoder heads.
    pub fn encode_batch(&self, obs: &[f32], batch: usize) -> Result<EncoderOutput> {
        let w = self.arch.obs_dim;
        if obs.len() != batch * w {
            return Err(ModelError::DataMismatch(format!(
                "{} values for batch {batch} x obs {w}",
                obs.len()
            )));
        }
        if self.config.variant == Variant::Cvae {
            return Err(ModelError::DataMismatch(
                "conditional variant needs labels; use eval_outputs on a labeled dataset".into(),
            ));
        }
        let batch_in = BatchInput::<f32> {
            x: Tensor::new(vec![batch, w], obs.iter().map(|&v| v).collect())?,
            conf: vec![0; batch],
            task: vec![0; batch],
            eps_z: (0..self.arch.n_conf)
                .map(|_| Tensor::zeros(vec![batch, self.arch.latent_dim]))
                .collect(),
            eps_pi: Tensor::zeros(vec![batch, self.arch.n_conf]),
        };
        let mut tape = Tape::new();
        let bound = tape.bind_params(&self.params);
        let nodes = build_loss(&mut tape, &bound, &self.eval_config(), &self.arch, &batch_in)?;
        let to64 = |id| tape.value(id).data().iter().map(|&v: &f32| v as f64).collect::<Vec<f64>>();
        Ok(EncoderOutput {
            batch,
            latent_dim: self.arch.latent_dim,
            n_conf: self.arch.n_conf,
            mu: nodes.encoder.mu.iter().map(|&m| to64(m)).collect(),
            logvar: nodes.encoder.logvar.iter().map(|&m| to64(m)).collect(),
            pi_mu: to64(nodes.encoder.pi_mu),
            pi_logsig: to64(nodes.encoder.pi_logsig),
        })
    }

    /// Labels are irrelevant at evaluation; collapse the loss weights that
    /// depend on them so the eval pass validates on any dataset.
    fn eval_config(&self) -> CdVaeConfig {
        let mut cfg = self.config.clone();
        if cfg.variant == Variant::CdvaeIoss {
            // The surrogate constrains batch size; eval never needs it.
            cfg.variant = Variant::Cdvae;
            cfg.lambda_ioss = 0.0;
        }
        cfg
    }

    /// Evaluation-time latent codes for a whole dataset (assignment-weighted
    /// component means), row-major `N x D`.
    pub fn latents(&self, ds: &LabeledDataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ds.len() * self.arch.latent_dim);
        for chunk_start in (0..ds.len()).step_by(256) {
            let end = (chunk_start + 256).min(ds.len());
            let batch = end - chunk_start;
            let obs = &ds.obs[chunk_start * ds.obs_len()..end * ds.obs_len()];
            let enc = self.encode_batch(obs, batch)?;
            out.extend(enc.aggregate_mean(self.config.pi_policy));
        }
        Ok(out)
    }

    /// Latent code of a single observation.
    pub fn encode_one(&self, obs: &[f32]) -> Result<Vec<f64>> {
        let enc = self.encode_batch(obs, 1)?;
        Ok(enc.aggregate_mean(self.config.pi_policy))
    }

    fn decode_eval(&self, ds: &LabeledDataset, idx: &[usize]) -> Result<Vec<f32>> {
        let batch = gather_batch::<f32>(ds, idx, &self.config, &self.arch, None)?;
        let mut tape = Tape::new();
        let bound = tape.bind_params(&self.params);
        let cfg = if self.config.variant == Variant::Cvae {
            self.config.clone()
        } else {
            self.eval_config()
        };
        let nodes = build_loss(&mut tape, &bound, &cfg, &self.arch, &batch)?;
        Ok(tape.value(nodes.dec_out).data().to_vec())
    }

    /// Reconstructions for a labeled dataset (generative variants).
    pub fn reconstruct(&self, ds: &LabeledDataset) -> Result<Vec<f32>> {
        if self.config.is_classifier() {
            return Err(wrong_variant(Variant::Cdvae, self.config.variant));
        }
        let mut out = Vec::with_capacity(ds.obs.len());
        for chunk_start in (0..ds.len()).step_by(256) {
            let end = (chunk_start + 256).min(ds.len());
            let idx: Vec<usize> = (chunk_start..end).collect();
            out.extend(self.decode_eval(ds, &idx)?);
        }
        Ok(out)
    }

    /// Class distribution for one observation (classifier variant).
    pub fn classify(&self, obs: &[f32]) -> Result<Vec<f64>> {
        if !self.config.is_classifier() {
            return Err(wrong_variant(Variant::Classifier, self.config.variant));
        }
        let enc = self.encode_batch(obs, 1)?;
        let z64 = enc.aggregate_mean(self.config.pi_policy);
        let z: Vec<f32> = z64.iter().map(|&v| v as f32).collect();
        let zt = Tensor::new(vec![1, self.arch.latent_dim], z)?;
        let logits = crate::ndiff::mlp_forward(&self.params, &zt, "dec", &self.arch.decoder)?;
        let row = logits.data();
        let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| ((v - mx) as f64).exp()).collect();
        let s: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / s).collect())
    }

    /// Accuracy of the classifier on a labeled dataset.
    pub fn accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        if !self.config.is_classifier() {
            return Err(wrong_variant(Variant::Classifier, self.config.variant));
        }
        let mut correct = 0usize;
        for chunk_start in (0..ds.len()).step_by(256) {
            let end = (chunk_start + 256).min(ds.len());
            let idx: Vec<usize> = (chunk_start..end).collect();
            let logits = self.decode_eval(ds, &idx)?;
            let ncls = self.config.n_classes;
            for (row, &i) in idx.iter().enumerate() {
                let slice = &logits[row * ncls..(row + 1) * ncls];
                let pred = slice
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(j, _)| j)
                    .unwrap_or(0);
                if pred == ds.factor_row(i)[self.config.task_factor] as usize {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / ds.len() as f64)
    }

    /// Mean loss breakdown over a dataset without updating parameters
    /// (noise-free forward).
    pub fn evaluate_loss(&self, ds: &LabeledDataset) -> Result<LossBreakdown> {
        let mut parts = Vec::new();
        for chunk_start in (0..ds.len()).step_by(256) {
            let end = (chunk_start + 256).min(ds.len());
            let idx: Vec<usize> = (chunk_start..end).collect();
            let batch = gather_batch::<f32>(ds, &idx, &self.config, &self.arch, None)?;
            let mut tape = Tape::new();
            let bound = tape.bind_params(&self.params);
            let cfg = if self.config.variant == Variant::Cvae {
                self.config.clone()
            } else {
                self.eval_config()
            };
            let nodes = build_loss(&mut tape, &bound, &cfg, &self.arch, &batch)?;
            parts.push(LossBreakdown {
                total: tape.value(nodes.total).item()? as f64,
                fit: tape.value(nodes.fit).item()? as f64,
                cls: tape.value(nodes.cls).item()? as f64,
                kl: tape.value(nodes.kl).item()? as f64,
                ioss: 0.0,
            });
        }
        Ok(LossBreakdown::mean_of(&parts))
    }

    /// Save parameters (`.cdpt`) and a JSON sidecar (config echo, arch,
    /// history, divergence flag).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(crate::ndiff::NdiffError::Io)?;
        save_params(&self.params, &dir.join("params.cdpt"))?;
        let sidecar = serde_json::json!({
            "config": self.config,
            "arch": self.arch,
            "history": self.history,
            "diverged": self.diverged,
        });
        let text = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| ModelError::Sidecar(e.to_string()))?;
        std::fs::write(dir.join("model.json"), text).map_err(crate::ndiff::NdiffError::Io)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TrainedModel> {
        let params = load_params(&dir.join("params.cdpt"))?;
        let raw = std::fs::read_to_string(dir.join("model.json"))
            .map_err(crate::ndiff::NdiffError::Io)?;
        let sidecar: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| ModelError::Sidecar(e.to_string()))?;
        let parse = |key: &str| -> Result<serde_json::Value> {
            sidecar
                .get(key)
                .cloned()
                .ok_or_else(|| ModelError::Sidecar(format!("missing key {key:?}")))
        };
        let config: CdVaeConfig = serde_json::from_value(parse("config")?)
            .map_err(|e| ModelError::Sidecar(e.to_string()))?;
        let arch: ModelArch = serde_json::from_value(parse("arch")?)
            .map_err(|e| ModelError::Sidecar(e.to_string()))?;
        let history: Vec<LossBreakdown> = serde_json::from_value(parse("history")?)
            .map_err(|e| ModelError::Sidecar(e.to_string()))?;
        let diverged = parse("diverged")?.as_bool().unwrap_or(false);
        Ok(TrainedModel { config, arch, params, history, diverged })
    }

    /// After a KL-regularized run, mean per-dimension encoder variances are
    /// expected to sit in a moderate band; log (never assert) when they
    /// drift out of it on a training sample.
    fn log_variance_sanity(&self, ds: &LabeledDataset) {
        if self.config.lambda_kl <= 0.0 || self.config.epochs < 5 || self.config.is_classifier() {
            return;
        }
        let probe = ds.take(256.min(ds.len()));
        if let Ok(enc) = self.encode_batch(&probe.obs, probe.len()) {
            let mut total = 0.0;
            let mut count = 0usize;
            for lv in &enc.logvar {
                for &v in lv {
                    total += v.exp();
                    count += 1;
                }
            }
            let mean_var = total / count.max(1) as f64;
            if !(0.05..=5.0).contains(&mean_var) {
                log::warn!(
                    "mean encoder variance {mean_var:.4} outside [0.05, 5] after training ({})",
                    self.config.variant
                );
            }
        }
    }
}
