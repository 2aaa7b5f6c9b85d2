use rand::Rng;

use super::params::ParamSet;
use super::tape::{BoundParams, NodeId, Tape};
use super::tensor::{Scalar, Tensor};
use super::{NdiffError, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// Fully connected architecture: `sizes[0]` inputs through hidden layers to
/// `sizes.last()` outputs. The final layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpArch {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Self {
        MlpArch { sizes, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty arch")
    }

    fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.w{layer}")
    }

    fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.b{layer}")
    }
}

/// Insert Xavier-uniform initialized weights and zero biases for `arch`
/// under `prefix`. Draws are made in `f64` and cast, so two models of
/// different scalar types built from equal RNG states line up.
pub fn mlp_init<T: Scalar, R: Rng>(
    params: &mut ParamSet<T>,
    prefix: &str,
    arch: &MlpArch,
    rng: &mut R,
) -> Result<()> {
    if arch.sizes.len() < 2 {
        return Err(NdiffError::InvalidArgument(format!(
            "arch needs at least [in, out], got {:?}",
            arch.sizes
        )));
    }
    for layer in 0..arch.sizes.len() - 1 {
        let (fan_in, fan_out) = (arch.sizes[layer], arch.sizes[layer + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<T> = (0..fan_in * fan_out)
            .map(|_| T::c(rng.random_range(-bound..bound)))
            .collect();
        params.insert(MlpArch::weight_name(prefix, layer), Tensor::matrix(fan_in, fan_out, w)?)?;
        params.insert(MlpArch::bias_name(prefix, layer), Tensor::zeros(vec![fan_out]))?;
    }
    Ok(())
}

/// Forward pass on an existing tape; `x` is a `[batch, in]` node.
pub fn mlp_forward_tape<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    prefix: &str,
    x: NodeId,
    arch: &MlpArch,
) -> Result<NodeId> {
    let got = tape.value(x).dims2()?.1;
    if got != arch.input_dim() {
        return Err(NdiffError::ShapeMismatch {
            op: "mlp_forward",
            detail: format!("input dim {got}, arch expects {}", arch.input_dim()),
        });
    }
    let mut h = x;
    let layers = arch.sizes.len() - 1;
    for layer in 0..layers {
        let w = bound.id(&MlpArch::weight_name(prefix, layer))?;
        let b = bound.id(&MlpArch::bias_name(prefix, layer))?;
        h = tape.matmul(h, w)?;
        h = tape.add_row(h, b)?;
        if layer + 1 < layers {
            h = match arch.activation {
                Activation::Tanh => tape.tanh(h)?,
                Activation::Relu => tape.relu(h)?,
            };
        }
    }
    Ok(h)
}

/// Plain (no-gradient) forward pass, evaluated through a scratch tape so
/// training and evaluation share one code path.
pub fn mlp_forward<T: Scalar>(
    params: &ParamSet<T>,
    x: &Tensor<T>,
    prefix: &str,
    arch: &MlpArch,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = tape.bind_params(params);
    let xid = tape.constant(x.clone());
    let out = mlp_forward_tape(&mut tape, &bound, prefix, xid, arch)?;
    Ok(tape.value(out).clone())
}
