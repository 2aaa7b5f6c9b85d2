//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! The op vocabulary is a fixed, small set (matmul, elementwise arithmetic,
//! broadcast add/mul/div along rows or columns, exp/log/tanh/relu/sqrt,
//! softmax, reductions, slice/concat/pick) — enough for small MLP encoders
//! and decoders and the mixture-latent losses built on top of them.
//!
//! Values are checked for finiteness after every public operation; a NaN or
//! infinity is reported as an error instead of propagating. `log` and
//! division denominators are clamped at `1e-12` so that optimization keeps
//! running near the boundary of the domain.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_params, save_params};
pub use gradcheck::grad_check;
pub use mlp::{mlp_forward, mlp_forward_tape, mlp_init, Activation, MlpArch};
pub use params::ParamSet;
pub use tape::{backward, BoundParams, NodeId, Tape};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

/// Errors from tensor construction, tape evaluation and checkpoint IO.
#[derive(Debug, Error)]
pub enum NdiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("parameter {0:?} already present")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NdiffError>;

/// Lower clamp applied to `log` inputs and division denominators.
pub const DOMAIN_CLAMP: f64 = 1e-12;
