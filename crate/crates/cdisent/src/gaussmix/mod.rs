//! Exact Gaussian and mixture-of-Gaussians algebra in `f64`.
//!
//! One Gaussian component per confounder value, with mixing weights, is
//! the latent model this project trains towards; this module provides the
//! closed-form pieces used both by losses and by diagnostics:
//!
//! - conditional distributions of a component given a subset of
//!   coordinates (Schur complement formulas),
//! - the per-component unit-covariance KL term,
//! - the label-adjusted conditional first moment (prior-weighted mixture of
//!   per-component conditional means),
//! - the moment discrepancy `l_c` between that adjusted conditional mean
//!   and the unconditional mean, summed over coordinates — zero exactly
//!   when every nonzero-weight component has diagonal covariance,
//! - mixture log-densities via log-sum-exp.

mod linalg;

use linalg::{cholesky, solve};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("covariance block {0} is singular (pivot below 1e-10)")]
    SingularBlock(String),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("nonpositive variance {0}")]
    NonPositiveVariance(f64),
    #[error("covariance not symmetric within 1e-10 at ({0},{1})")]
    NotSymmetric(usize, usize),
    #[error("mixture weights sum to {0}, expected 1")]
    BadWeights(f64),
    #[error("empty mixture")]
    Empty,
}

pub type Result<T> = std::result::Result<T, GaussError>;

/// Covariance storage. Models produce diagonal covariances; the dense form
/// exists for oracle tests and general algebra.
#[derive(Debug, Clone, PartialEq)]
pub enum Cov {
    Diag(Vec<f64>),
    /// Row-major `D x D`.
    Dense(Vec<f64>),
}

/// Single Gaussian component `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentGaussian {
    pub mean: Vec<f64>,
    pub cov: Cov,
}

impl ComponentGaussian {
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(GaussError::Dim(format!(
                "mean has {} entries, variances {}",
                mean.len(),
                variances.len()
            )));
        }
        Ok(ComponentGaussian { mean, cov: Cov::Diag(variances) })
    }

    pub fn dense(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(GaussError::Dim(format!("cov has {} entries for D={d}", cov.len())));
        }
        for i in 0..d {
            for j in i + 1..d {
                if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-10 {
                    return Err(GaussError::NotSymmetric(i, j));
                }
            }
        }
        Ok(ComponentGaussian { mean, cov: Cov::Dense(cov) })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_entry(&self, i: usize, j: usize) -> f64 {
        match &self.cov {
            Cov::Diag(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
            Cov::Dense(m) => m[i * self.dim() + j],
        }
    }

    pub fn is_diagonal(&self) -> bool {
        match &self.cov {
            Cov::Diag(_) => true,
            Cov::Dense(m) => {
                let d = self.dim();
                (0..d).all(|i| (0..d).all(|j| i == j || m[i * d + j] == 0.0))
            }
        }
    }

    /// Exact conditional of the unobserved coordinates given
    /// `observed = (index, value)` pairs:
    /// mean `mu_k + S_kj S_jj^{-1} (z_j - mu_j)`,
    /// covariance `S_kk - S_kj S_jj^{-1} S_jk`.
    pub fn conditional(&self, observed: &[(usize, f64)]) -> Result<ComponentGaussian> {
        let d = self.dim();
        let obs_idx: Vec<usize> = observed.iter().map(|&(i, _)| i).collect();
        if obs_idx.iter().any(|&i| i >= d) {
            return Err(GaussError::Dim(format!("observed index out of range 0..{d}")));
        }
        if obs_idx.is_empty() || obs_idx.len() >= d {
            return Err(GaussError::Dim(
                "conditioning set must be a proper nonempty subset".into(),
            ));
        }
        let keep: Vec<usize> = (0..d).filter(|i| !obs_idx.contains(i)).collect();
        let nj = obs_idx.len();
        let nk = keep.len();

        // Residual z_j - mu_j.
        let resid: Vec<f64> = observed.iter().map(|&(i, z)| z - self.mean[i]).collect();
        // Blocks.
        let mut s_jj = vec![0.0; nj * nj];
        for (r, &i) in obs_idx.iter().enumerate() {
            for (c, &j) in obs_idx.iter().enumerate() {
                s_jj[r * nj + c] = self.cov_entry(i, j);
            }
        }
        let mut s_kj = vec![0.0; nk * nj];
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in obs_idx.iter().enumerate() {
                s_kj[r * nj + c] = self.cov_entry(i, j);
            }
        }

        // S_jj^{-1} [resid | S_jk] via one factorization.
        let mut rhs = vec![0.0; nj * (1 + nk)];
        for r in 0..nj {
            rhs[r * (1 + nk)] = resid[r];
            for c in 0..nk {
                // S_jk = S_kj^T
                rhs[r * (1 + nk) + 1 + c] = s_kj[c * nj + r];
            }
        }
        let sol = solve(&s_jj, &rhs, nj, 1 + nk)
            .ok_or_else(|| GaussError::SingularBlock(format!("Sigma[{obs_idx:?},{obs_idx:?}]")))?;

        let mut mean = Vec::with_capacity(nk);
        for (r, &i) in keep.iter().enumerate() {
            let mut m = self.mean[i];
            for c in 0..nj {
                m += s_kj[r * nj + c] * sol[c * (1 + nk)];
            }
            mean.push(m);
        }
        let mut cov = vec![0.0; nk * nk];
        for r in 0..nk {
            for c in 0..nk {
                let mut acc = self.cov_entry(keep[r], keep[c]);
                for j in 0..nj {
                    acc -= s_kj[r * nj + j] * sol[j * (1 + nk) + 1 + c];
                }
                cov[r * nk + c] = acc;
            }
        }
        // Symmetrize away factorization round-off.
        for r in 0..nk {
            for c in r + 1..nk {
                let avg = 0.5 * (cov[r * nk + c] + cov[c * nk + r]);
                cov[r * nk + c] = avg;
                cov[c * nk + r] = avg;
            }
        }
        ComponentGaussian::dense(mean, cov)
    }

    /// Conditional mean of coordinate `i` given all the others.
    pub fn conditional_mean_of(&self, i: usize, z_minus_i: &[f64]) -> Result<f64> {
        let d = self.dim();
        if z_minus_i.len() != d - 1 {
            return Err(GaussError::Dim(format!(
                "z_minus_i has {} entries for D={d}",
                z_minus_i.len()
            )));
        }
        if d == 1 {
            return Ok(self.mean[0]);
        }
        let observed: Vec<(usize, f64)> =
            (0..d).filter(|&j| j != i).zip(z_minus_i.iter().copied()).collect();
        let cond = self.conditional(&observed)?;
        Ok(cond.mean[0])
    }

    /// Log density at `z`; requires a positive-definite covariance.
    pub fn logpdf(&self, z: &[f64]) -> Result<f64> {
        let d = self.dim();
        if z.len() != d {
            return Err(GaussError::Dim(format!("z has {} entries for D={d}", z.len())));
        }
        match &self.cov {
            Cov::Diag(vars) => {
                if let Some(&v) = vars.iter().find(|&&v| v <= 0.0) {
                    return Err(GaussError::NonPositiveVariance(v));
                }
                let mut acc = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
                for i in 0..d {
                    let r = z[i] - self.mean[i];
                    acc -= 0.5 * (vars[i].ln() + r * r / vars[i]);
                }
                Ok(acc)
            }
            Cov::Dense(m) => {
                let chol = cholesky(m, d).ok_or(GaussError::NotPositiveDefinite)?;
                // logdet = 2 sum log L_ii; quadratic form via forward solve.
                let mut logdet = 0.0;
                for i in 0..d {
                    logdet += 2.0 * chol[i * d + i].ln();
                }
                let resid: Vec<f64> = (0..d).map(|i| z[i] - self.mean[i]).collect();
                let mut w = vec![0.0; d];
                for i in 0..d {
                    let mut acc = resid[i];
                    for j in 0..i {
                        acc -= chol[i * d + j] * w[j];
                    }
                    w[i] = acc / chol[i * d + i];
                }
                let quad: f64 = w.iter().map(|x| x * x).sum();
                Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad))
            }
        }
    }
}

/// Mixture of Gaussians over a shared dimension with prior weights.
#[derive(Debug, Clone)]
pub struct MixtureLatent {
    components: Vec<ComponentGaussian>,
    weights: Vec<f64>,
}

impl MixtureLatent {
    pub fn new(components: Vec<ComponentGaussian>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(GaussError::Empty);
        }
        if components.len() != weights.len() {
            return Err(GaussError::Dim(format!(
                "{} components, {} weights",
                components.len(),
                weights.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(GaussError::Dim("components disagree on dimension".into()));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(GaussError::BadWeights(sum));
        }
        Ok(MixtureLatent { components, weights })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[ComponentGaussian] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mixture mean of coordinate `i`.
    pub fn mean_of(&self, i: usize) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.mean[i]).sum()
    }

    /// Label-adjusted conditional first moment: the prior-weighted average
    /// over components of the within-component conditional mean of
    /// coordinate `i` given the remaining coordinates.
    pub fn adjusted_conditional_mean(&self, i: usize, z_minus_i: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (w, comp) in self.weights.iter().zip(&self.components) {
            if *w == 0.0 {
                continue; // zero-weight components may be arbitrary
            }
            acc += w * comp.conditional_mean_of(i, z_minus_i)?;
        }
        Ok(acc)
    }

    /// Mixture log density at `z` via log-sum-exp across components.
    pub fn logpdf(&self, z: &[f64]) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.components.len());
        for (w, comp) in self.weights.iter().zip(&self.components) {
            if *w == 0.0 {
                continue;
            }
            terms.push(w.ln() + comp.logpdf(z)?);
        }
        if terms.is_empty() {
            return Err(GaussError::Empty);
        }
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = terms.iter().map(|t| (t - mx).exp()).sum();
        Ok(mx + s.ln())
    }
}

/// KL divergence of `N(mu, diag(variances))` from the unit-covariance
/// Gaussian with the same mean: `0.5 [ -sum log v_i - D + sum v_i ]`.
/// Nonnegative, and zero exactly at unit variances.
pub fn kl_unit_cov(variances: &[f64]) -> Result<f64> {
    if let Some(&v) = variances.iter().find(|&&v| v <= 0.0) {
        return Err(GaussError::NonPositiveVariance(v));
    }
    let d = variances.len() as f64;
    let sum: f64 = variances.iter().sum();
    let logsum: f64 = variances.iter().map(|v| v.ln()).sum();
    Ok(0.5 * (-logsum - d + sum))
}

/// Aggregation over evaluation points for [`lc_moment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LcAggregate {
    /// Average the per-point discrepancy (stable statistic, the default).
    #[default]
    Mean,
    /// Report the worst point.
    Sup,
}

/// First-moment interventional discrepancy of a mixture: for each eval
/// point `z`, sum over coordinates the absolute difference between the
/// label-adjusted conditional mean of `Z_i` given `z_{-i}` and the
/// unconditional mixture mean of `Z_i`; aggregate over eval points.
///
/// Zero (to rounding) when every nonzero-weight component is diagonal.
pub fn lc_moment(m: &MixtureLatent, eval_points: &[Vec<f64>], agg: LcAggregate) -> Result<f64> {
    let d = m.dim();
    if eval_points.is_empty() {
        return Err(GaussError::Empty);
    }
    let mut per_point = Vec::with_capacity(eval_points.len());
    for z in eval_points {
        if z.len() != d {
            return Err(GaussError::Dim(format!("eval point has {} entries for D={d}", z.len())));
        }
        let mut total = 0.0;
        for i in 0..d {
            let z_minus: Vec<f64> = (0..d).filter(|&j| j != i).map(|j| z[j]).collect();
            let adjusted = m.adjusted_conditional_mean(i, &z_minus)?;
            total += (adjusted - m.mean_of(i)).abs();
        }
        per_point.push(total);
    }
    Ok(match agg {
        LcAggregate::Mean => per_point.iter().sum::<f64>() / per_point.len() as f64,
        LcAggregate::Sup => per_point.iter().cloned().fold(0.0, f64::max),
    })
}

/// Default evaluation points: each component mean shifted by plus and minus
/// one standard deviation along each axis.
pub fn default_eval_points(m: &MixtureLatent) -> Vec<Vec<f64>> {
    let d = m.dim();
    let mut points = Vec::with_capacity(2 * d * m.components().len());
    for comp in m.components() {
        for axis in 0..d {
            let sd = comp.cov_entry(axis, axis).max(0.0).sqrt();
            for sign in [-1.0, 1.0] {
                let mut z = comp.mean.clone();
                z[axis] += sign * sd;
                points.push(z);
            }
        }
    }
    points
}
