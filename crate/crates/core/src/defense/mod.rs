//! Semantic distance minimization: adversarial training for the semantic
//! encoder.
//!
//! Each batch first generates online adversarial samples by maximizing the
//! KL divergence between the encodings of perturbed and benign inputs
//! (white-box: the defender owns the encoder), then descends on
//! `natural_loss + lambda * robust_loss`, where the robust loss is that same
//! mean KL. The random-defense baseline replaces the inner maximization with
//! noise of the same norm.

mod sdm;

pub use sdm::{
    sdm_inner_maximize, sdm_loss, train_random_defense, train_sdm, SdmBatchReport, SdmConfig,
};
