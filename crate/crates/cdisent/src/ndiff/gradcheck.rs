use super::params::ParamSet;
use super::tape::{backward, BoundParams, NodeId, Tape};
use super::{NdiffError, Result};

/// Relative-error floor used in the denominator of the comparison.
const REL_FLOOR: f64 = 1e-8;

/// Compare reverse-mode gradients of a scalar loss against central finite
/// differences, entry by entry, in 64-bit arithmetic.
///
/// `build` records the loss for the current parameter values on a fresh
/// tape. Returns the max over all parameter entries of
/// `|analytic - cd| / max(|analytic|, |cd|, 1e-8)`.
pub fn grad_check<F>(build: F, params: &ParamSet<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &BoundParams) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(NdiffError::InvalidArgument("eps must be positive".into()));
    }

    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = tape.bind_params(ps);
        let loss = build(&mut tape, &bound)?;
        tape.value(loss).item()
    };

    // Analytic gradients.
    let mut work = params.clone();
    {
        let mut tape = Tape::new();
        let bound = tape.bind_params(&work);
        let loss = build(&mut tape, &bound)?;
        backward(&tape, loss, &bound, &mut work)?;
    }

    let names: Vec<String> = work.iter().map(|p| p.name.clone()).collect();
    let mut max_rel = 0.0f64;
    for name in &names {
        let n = work.get(name)?.value.len();
        for idx in 0..n {
            let analytic = work.get(name)?.grad.data()[idx];
            let orig = work.get(name)?.value.data()[idx];

            let mut probe = work.clone();
            probe.value_mut(name)?.data_mut()[idx] = orig + eps;
            let plus = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[idx] = orig - eps;
            let minus = eval(&probe)?;
            let cd = (plus - minus) / (2.0 * eps);

            if !cd.is_finite() {
                return Err(NdiffError::NonFinite { op: "grad_check" });
            }
            let rel = (analytic - cd).abs() / analytic.abs().max(cd.abs()).max(REL_FLOOR);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
