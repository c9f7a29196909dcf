//! Minimal neural-network kernels with explicit backprop.
//!
//! Everything is generic over [`crate::Scalar`] and fully deterministic given
//! a seed: no global RNG, no threading inside a single forward/backward.

mod adam;
mod ctc;
mod layer;
mod loss;

pub use adam::Adam;
pub use ctc::{ctc_loss, CtcGrad, BLANK as CTC_BLANK};
pub use layer::{Conv2d, Dense, Feat, Layer, LayerCache, Sequential};
pub use loss::{
    cross_entropy, kl_softmax, kl_softmax_backward, log_softmax_row, softmax_row, CrossEntropyGrad,
    KlGrads,
};

use thiserror::Error;

/// Errors from loss computations and training-facing kernels.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("label sequence invalid: {0}")]
    BadLabel(String),
}
