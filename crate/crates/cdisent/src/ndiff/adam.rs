use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};
use super::{NdiffError, Result};

/// Adam hyperparameters. Defaults are lr=1e-3, betas=(0.9, 0.999), eps=1e-8.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState { cfg, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }
}

/// One bias-corrected Adam update from the gradients currently stored in
/// `params`. Increments the step counter by exactly one.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(NdiffError::InvalidArgument(format!(
            "optimizer state tracks {} parameters, set has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let b1 = T::c(state.cfg.beta1);
    let b2 = T::c(state.cfg.beta2);
    let lr = T::c(state.cfg.lr);
    let eps = T::c(state.cfg.eps);
    let one = T::one();
    let corr1 = one - T::c(state.cfg.beta1.powi(state.t as i32));
    let corr2 = one - T::c(state.cfg.beta2.powi(state.t as i32));

    for (idx, p) in params.params_mut().iter_mut().enumerate() {
        if p.grad.shape() != p.value.shape() {
            return Err(NdiffError::ShapeMismatch {
                op: "adam_step",
                detail: format!("grad {:?} vs param {:?}", p.grad.shape(), p.value.shape()),
            });
        }
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let val = p.value.data_mut();
        for ((w, g), (mi, vi)) in
            val.iter_mut().zip(p.grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (one - b1) * *g;
            *vi = b2 * *vi + (one - b2) * *g * *g;
            let mhat = *mi / corr1;
            let vhat = *vi / corr2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
        p.value.check_finite("adam_step")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(vec![value]).unwrap()).unwrap();
        ps.set_grad("w", Tensor::vector(vec![grad]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut ps = single(1.7, 0.0);
        let mut st = AdamState::new(&ps, AdamConfig::default());
        adam_step(&mut ps, &mut st).unwrap();
        assert_eq!(ps.get("w").unwrap().value.data()[0], 1.7);
        assert_eq!(st.step_count(), 1);
    }

    // First step with g=1: bias-corrected m̂ = v̂ = 1, so the update is
    // -lr / (1 + eps).
    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut ps = single(0.0, 1.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::new(&ps, cfg);
        adam_step(&mut ps, &mut st).unwrap();
        let w = ps.get("w").unwrap().value.data()[0];
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-12, "got {w}, want {expected}");
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut ps = single(0.4, 0.0);
            let mut st = AdamState::new(&ps, AdamConfig::default());
            let mut trace = Vec::new();
            for step in 0..20 {
                let g = ((step * 7 + 3) % 5) as f64 - 2.0;
                ps.set_grad("w", Tensor::vector(vec![g]).unwrap()).unwrap();
                adam_step(&mut ps, &mut st).unwrap();
                trace.push(ps.get("w").unwrap().value.data()[0].to_bits());
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
