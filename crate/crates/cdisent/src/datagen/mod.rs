//! Procedural confounded datasets at desk scale.
//!
//! A dataset is generated causally: a confounder value `c` is drawn first,
//! then each ground-truth factor independently from its conditional
//! categorical given `c`, then the observation is rendered from the factor
//! assignment (a small anti-aliased shape image, or a tabular projection of
//! the one-hot factor encoding). Factors are conditionally independent
//! given the confounder *by construction*; every marginal correlation
//! between factors flows through the confounder.
//!
//! The shift-severity split mixes this correlated regime with a
//! decorrelated regime that keeps the same factor marginals (factors drawn
//! independently from the mixture-averaged marginals), so severity moves
//! dependence, not marginals, and the target domain is always fully
//! decorrelated.

mod io;
mod recipes;
mod render;

pub use io::{read_dataset, write_dataset};
pub use recipes::{desk_image_spec, desk_tabular_spec};
pub use render::render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad generator spec: {0}")]
    BadSpec(String),
    #[error("factor value {value} out of range for {factor:?} (cardinality {card})")]
    FactorOutOfRange { factor: String, value: usize, card: usize },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("label merge: {0}")]
    Relabel(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One ground-truth cause of variation.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
}

/// Ordered list of factors.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FactorSpec {
    pub factors: Vec<Factor>,
}

impl FactorSpec {
    pub fn validate(&self) -> Result<()> {
        for f in &self.factors {
            if f.cardinality < 2 {
                return Err(DataError::BadSpec(format!(
                    "factor {:?} needs cardinality >= 2",
                    f.name
                )));
            }
        }
        let mut names: Vec<&str> = self.factors.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.factors.len() {
            return Err(DataError::BadSpec("duplicate factor names".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn onehot_dim(&self) -> usize {
        self.factors.iter().map(|f| f.cardinality).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }
}

/// Observation shape: a small RGB image or a tabular vector.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObsSpec {
    Image { height: usize, width: usize },
    Tabular { dim: usize },
}

impl ObsSpec {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            ObsSpec::Image { height, width } => vec![*height, *width, 3],
            ObsSpec::Tabular { dim } => vec![*dim],
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Full generator: confounder prior, per-confounder-value factor
/// conditionals (product form), observation model and noise level.
///
/// `tabular_scales` weights each factor's block of the projection matrix,
/// controlling how strongly that factor shows in tabular observations;
/// `design_seed` fixes the projection matrix itself.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenSpec {
    pub factors: FactorSpec,
    /// Confounder prior `P(C)`.
    pub conf_probs: Vec<f64>,
    /// `cond[c][k][v] = P(G_k = v | C = c)`.
    pub cond: Vec<Vec<Vec<f64>>>,
    pub obs: ObsSpec,
    /// Observation noise sigma.
    pub noise: f64,
    /// Per-factor weight of the tabular projection blocks (ignored for
    /// images).
    pub tabular_scales: Vec<f64>,
    /// Seed of the fixed tabular projection matrix.
    pub design_seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        self.factors.validate()?;
        let nc = self.conf_probs.len();
        if nc == 0 {
            return Err(DataError::BadSpec("empty confounder prior".into()));
        }
        let check_dist = |d: &[f64], what: &str| -> Result<()> {
            let sum: f64 = d.iter().sum();
            if d.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(DataError::BadSpec(format!("{what} sums to {sum}")));
            }
            Ok(())
        };
        check_dist(&self.conf_probs, "confounder prior")?;
        if self.cond.len() != nc {
            return Err(DataError::BadSpec(format!(
                "{} conditional blocks for {nc} confounder values",
                self.cond.len()
            )));
        }
        for (c, block) in self.cond.iter().enumerate() {
            if block.len() != self.factors.len() {
                return Err(DataError::BadSpec(format!(
                    "conditional block {c} covers {} factors, expected {}",
                    block.len(),
                    self.factors.len()
                )));
            }
            for (k, d) in block.iter().enumerate() {
                if d.len() != self.factors.factors[k].cardinality {
                    return Err(DataError::BadSpec(format!(
                        "P(G_{k}|C={c}) has {} entries",
                        d.len()
                    )));
                }
                check_dist(d, &format!("P(G_{k}|C={c})"))?;
            }
        }
        if self.noise < 0.0 {
            return Err(DataError::BadSpec("negative noise".into()));
        }
        if self.tabular_scales.len() != self.factors.len() {
            return Err(DataError::BadSpec("tabular_scales must match factor count".into()));
        }
        Ok(())
    }

    pub fn n_conf(&self) -> usize {
        self.conf_probs.len()
    }

    /// Mixture-averaged factor marginals `P(G_k) = sum_c P(c) P(G_k|c)`.
    pub fn factor_marginals(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> =
            self.factors.factors.iter().map(|f| vec![0.0; f.cardinality]).collect();
        for (c, pc) in self.conf_probs.iter().enumerate() {
            for (k, d) in self.cond[c].iter().enumerate() {
                for (v, p) in d.iter().enumerate() {
                    out[k][v] += pc * p;
                }
            }
        }
        out
    }

    /// Same generator with the confounder's influence severed: factors are
    /// drawn independently from the mixture-averaged marginals while the
    /// confounder label keeps its prior.
    pub fn decorrelated(&self) -> GenSpec {
        let marginals = self.factor_marginals();
        let mut out = self.clone();
        out.cond = (0..self.n_conf()).map(|_| marginals.clone()).collect();
        out
    }

    /// Exact joint `P(G_a, G_b)` implied by the generator (for oracle
    /// comparisons against empirical counts).
    pub fn implied_pair_joint(&self, a: usize, b: usize) -> Vec<Vec<f64>> {
        let ca = self.factors.factors[a].cardinality;
        let cb = self.factors.factors[b].cardinality;
        let mut joint = vec![vec![0.0; cb]; ca];
        for (c, pc) in self.conf_probs.iter().enumerate() {
            for (va, row) in joint.iter_mut().enumerate() {
                for (vb, cell) in row.iter_mut().enumerate() {
                    *cell += pc * self.cond[c][a][va] * self.cond[c][b][vb];
                }
            }
        }
        joint
    }
}

/// Materialized dataset: observations plus aligned factor and confounder
/// labels. Extra label columns live in memory only (the binary format
/// carries observations, factor labels and the confounder label).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub obs_shape: Vec<usize>,
    /// Row-major `N x prod(obs_shape)`.
    pub obs: Vec<f32>,
    /// Row-major `N x K`.
    pub factors: Vec<u16>,
    pub conf: Vec<u16>,
    pub n_factors: usize,
    pub extras: Vec<(String, Vec<u16>)>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.conf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf.is_empty()
    }

    pub fn obs_len(&self) -> usize {
        self.obs_shape.iter().product()
    }

    pub fn observation(&self, i: usize) -> &[f32] {
        let w = self.obs_len();
        &self.obs[i * w..(i + 1) * w]
    }

    pub fn factor_row(&self, i: usize) -> &[u16] {
        &self.factors[i * self.n_factors..(i + 1) * self.n_factors]
    }

    /// Column of one factor across all samples.
    pub fn factor_column(&self, k: usize) -> Vec<u16> {
        (0..self.len()).map(|i| self.factors[i * self.n_factors + k]).collect()
    }

    pub fn max_conf_label(&self) -> usize {
        self.conf.iter().map(|&c| c as usize).max().unwrap_or(0)
    }

    /// Relabel the confounder column through a value map.
    pub fn relabel_conf(&self, map: impl FnMut(u16, usize) -> u16) -> LabeledDataset {
        let mut map = map;
        let mut out = self.clone();
        out.conf = self.conf.iter().enumerate().map(|(i, &c)| map(c, i)).collect();
        out
    }

    /// Merge confounder labels via an explicit surjection table
    /// (`new = table[old]`), producing a partial label set.
    pub fn merge_conf_labels(&self, table: &[u16]) -> Result<LabeledDataset> {
        if self.conf.iter().any(|&c| c as usize >= table.len()) {
            return Err(DataError::Relabel(format!(
                "merge table covers {} labels, dataset has larger values",
                table.len()
            )));
        }
        Ok(self.relabel_conf(|c, _| table[c as usize]))
    }

    /// Refine confounder labels with an independent random bit:
    /// `new = 2*old + bit`. The refined set strictly contains the original
    /// labels' information (a superset label set).
    pub fn refine_conf_labels(&self, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b17);
        self.relabel_conf(|c, _| 2 * c + rng.random_range(0..2u16))
    }

    /// All confounder labels collapsed to zero (the empty label set).
    pub fn erase_conf_labels(&self) -> LabeledDataset {
        self.relabel_conf(|_, _| 0)
    }

    /// Deterministic truncation to the first `n` samples.
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            obs_shape: self.obs_shape.clone(),
            obs: self.obs[..n * self.obs_len()].to_vec(),
            factors: self.factors[..n * self.n_factors].to_vec(),
            conf: self.conf[..n].to_vec(),
            n_factors: self.n_factors,
            extras: self
                .extras
                .iter()
                .map(|(name, col)| (name.clone(), col[..n].to_vec()))
                .collect(),
        }
    }
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-sample RNG stream, independent of evaluation order; sampling could
/// run in parallel without changing output.
fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Draw `n` samples from the generator: confounder first, factors
/// conditionally independent given it, observation rendered last.
pub fn sample_dataset(spec: &GenSpec, n: usize, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(DataError::BadSpec("n must be >= 1".into()));
    }
    let k = spec.factors.len();
    let obs_shape = spec.obs.shape();
    let obs_len = spec.obs.len();
    let mut obs = Vec::with_capacity(n * obs_len);
    let mut factors = Vec::with_capacity(n * k);
    let mut conf = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(seed, i as u64);
        let c = sample_categorical(&mut rng, &spec.conf_probs);
        let mut g = Vec::with_capacity(k);
        for fk in 0..k {
            g.push(sample_categorical(&mut rng, &spec.cond[c][fk]));
        }
        let render_seed = rng.random::<u64>();
        let x = render(spec, &g, render_seed)?;
        obs.extend_from_slice(&x);
        factors.extend(g.iter().map(|&v| v as u16));
        conf.push(c as u16);
    }
    Ok(LabeledDataset { obs_shape, obs, factors, conf, n_factors: k, extras: Vec::new() })
}

/// Source-domain mixture: a `severity` fraction of samples from the
/// correlated generator and the rest from its decorrelated counterpart,
/// shuffled together.
pub fn sample_mixed(spec: &GenSpec, severity: f64, n: usize, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(DataError::BadSpec(format!("severity {severity} outside [0,1]")));
    }
    let n_corr = (severity * n as f64).round() as usize;
    let decorr_spec = spec.decorrelated();
    let corr = if n_corr > 0 { Some(sample_dataset(spec, n_corr, seed)?) } else { None };
    let dec = if n - n_corr > 0 {
        Some(sample_dataset(&decorr_spec, n - n_corr, seed.wrapping_add(0x9e37_79b9))?)
    } else {
        None
    };
    let mut parts: Vec<LabeledDataset> = corr.into_iter().chain(dec).collect();
    let mut merged = parts.remove(0);
    for p in parts {
        merged.obs.extend_from_slice(&p.obs);
        merged.factors.extend_from_slice(&p.factors);
        merged.conf.extend_from_slice(&p.conf);
    }
    // Deterministic shuffle so regime membership is not ordered.
    let mut order: Vec<usize> = (0..merged.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51_4055);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let w = merged.obs_len();
    let k = merged.n_factors;
    let mut out = LabeledDataset {
        obs_shape: merged.obs_shape.clone(),
        obs: Vec::with_capacity(merged.obs.len()),
        factors: Vec::with_capacity(merged.factors.len()),
        conf: Vec::with_capacity(merged.conf.len()),
        n_factors: k,
        extras: Vec::new(),
    };
    for &i in &order {
        out.obs.extend_from_slice(&merged.obs[i * w..(i + 1) * w]);
        out.factors.extend_from_slice(&merged.factors[i * k..(i + 1) * k]);
        out.conf.push(merged.conf[i]);
    }
    Ok(out)
}

/// Shift-severity split: a mixed source training set and a fully
/// decorrelated target set.
pub fn shifted_split(
    spec: &GenSpec,
    severity: f64,
    n_train: usize,
    n_target: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = sample_mixed(spec, severity, n_train, seed)?;
    let target = sample_dataset(&spec.decorrelated(), n_target, seed.wrapping_add(0x7a67_657e))?;
    Ok((train, target))
}
