//! Dense f64 tensors, a reverse-mode tape and the layers the three
//! classifiers are built from.

mod functional;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
mod params;
pub mod rng;
pub mod tape;
mod tensor;

use thiserror::Error;

pub use functional::{cross_entropy, log_sum_exp, readout_max, readout_mean, relu, softmax};
pub use gradcheck::{gradcheck, GradcheckReport, ParamCheck};
pub use optim::{Adam, Optimizer, Sgd};
pub use params::ParamSet;
pub use rng::Rng;
pub use tape::{BnStats, Gradients, NormAdjacency, Tape, Var};
pub use tensor::Tensor;

/// Variance guard added inside the batchnorm square root.
pub const BN_EPS: f64 = 1e-5;
/// Running statistics keep this fraction of their previous value per update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NdError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("normalization coefficients do not match the graph ({coeffs} coefficients for {edges} edges)")]
    CoeffGraphMismatch { coeffs: usize, edges: usize },
    #[error("dropout probability {0} is outside [0, 1)")]
    InvalidProbability(f64),
    #[error("batchnorm in training mode needs more than one value per feature, got {0}")]
    InvalidBatch(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("readout over an empty row set")]
    EmptyMask,
    #[error("loss does not depend on any trainable tensor")]
    DetachedTensor,
    #[error("non-finite values produced by {0}")]
    NonFinite(&'static str),
}

impl NdError {
    pub fn code(&self) -> &'static str {
        match self {
            NdError::ShapeMismatch { .. } => "shape_mismatch",
            NdError::CoeffGraphMismatch { .. } => "coeff_graph_mismatch",
            NdError::InvalidProbability(_) => "invalid_probability",
            NdError::InvalidBatch(_) => "invalid_batch",
            NdError::LabelOutOfRange { .. } => "label_out_of_range",
            NdError::EmptyMask => "empty_mask",
            NdError::DetachedTensor => "detached_tensor",
            NdError::NonFinite(_) => "non_finite",
        }
    }
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NdError {
    NdError::ShapeMismatch { op, detail: detail.into() }
}
