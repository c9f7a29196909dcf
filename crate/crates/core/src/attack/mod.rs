//! Semantic noise attacks.
//!
//! The black-box attack ([`sna_attack`]) sees the system only through a
//! [`SemanticOracle`]: the training interface that encodes submitted images
//! and returns their semantic vectors. It ascends the semantic distance
//! between adversarial and benign encodings with zeroth-order gradient
//! estimates, under an L2 pixel budget. A white-box PGD variant
//! ([`pgd_whitebox_attack`]) with exact gradients upper-bounds it, and
//! [`random_attack`] is the stochastic-noise baseline.

mod distance;
mod lowfreq;
mod pgd;
mod project;
mod random;
mod sna;
mod zo;

pub use distance::{semantic_distance, semantic_distance_with_grads, DistanceMetric};
pub use lowfreq::lowfreq_filter;
pub use pgd::pgd_whitebox_attack;
pub use project::project_l2_ball;
pub use random::random_attack;
pub use sna::sna_attack;
pub use zo::estimate_gradient_zo;

use crate::scalar::Scalar;
use crate::semcom::{SemComError, SemComPipeline};
use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack budget: {0}")]
    Budget(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("oracle failure after {queries_used} queries: {reason}")]
    Oracle { queries_used: u64, reason: String },
    #[error("non-finite gradient at iteration {iteration}")]
    NonFinite { iteration: usize },
}

/// Everything that bounds one attack run.
///
/// `epsilon = 0` is the empty ball: attacks return the originals untouched.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackBudget {
    /// L2 radius in pixel space.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub step_size: f64,
    /// Oracle queries spent per gradient estimate; even, at least 2.
    pub queries_per_iteration: usize,
    /// Finite-difference probe scale.
    pub smoothing_sigma: f64,
    /// Low-frequency DCT block size; `None` disables the filter.
    pub freq_cutoff: Option<usize>,
    /// Optional hard cap on total oracle queries; exceeding it truncates the
    /// run and flags the batch.
    pub max_total_queries: Option<u64>,
    pub metric: DistanceMetric,
    pub seed: u64,
}

impl Default for AttackBudget {
    fn default() -> Self {
        Self {
            epsilon: 3.6,
            max_iterations: 50,
            step_size: 0.45,
            queries_per_iteration: 40,
            smoothing_sigma: 1e-3,
            freq_cutoff: None,
            max_total_queries: None,
            metric: DistanceMetric::KlSoftmax,
            seed: 0,
        }
    }
}

impl AttackBudget {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AttackError::Budget(format!("epsilon {} invalid", self.epsilon)));
        }
        if self.queries_per_iteration < 2 || self.queries_per_iteration % 2 != 0 {
            return Err(AttackError::Budget(format!(
                "queries_per_iteration must be even and >= 2, got {}",
                self.queries_per_iteration
            )));
        }
        if !(self.smoothing_sigma > 0.0) {
            return Err(AttackError::Budget("smoothing_sigma must be positive".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(AttackError::Budget("step_size must be positive".into()));
        }
        if let Some(cu) = self.freq_cutoff {
            if cu == 0 {
                return Err(AttackError::Budget("freq_cutoff must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// The attacker's only view of the system: a query endpoint mapping image
/// batches to semantic vectors, with an atomically maintained query counter.
pub trait SemanticOracle<F>: Sync {
    /// Encodes `images` (batch-major) and increments the counter by the
    /// batch size.
    fn query_batch(&self, images: &Array4<F>) -> Result<Array2<F>, AttackError>;

    /// Total images submitted so far.
    fn queries_used(&self) -> u64;
}

/// Oracle backed by a pipeline's semantic encoder. Returns noiseless
/// encoder outputs, exactly what the edge server's training interface
/// exposes.
pub struct EncoderOracle<'a, F> {
    pipeline: &'a SemComPipeline<F>,
    counter: AtomicU64,
}

impl<'a, F: Scalar> EncoderOracle<'a, F> {
    pub fn new(pipeline: &'a SemComPipeline<F>) -> Self {
        Self { pipeline, counter: AtomicU64::new(0) }
    }
}

impl<F: Scalar> SemanticOracle<F> for EncoderOracle<'_, F> {
    fn query_batch(&self, images: &Array4<F>) -> Result<Array2<F>, AttackError> {
        self.counter.fetch_add(images.shape()[0] as u64, Ordering::Relaxed);
        self.pipeline.encode(images).map_err(|e: SemComError| AttackError::Oracle {
            queries_used: self.queries_used(),
            reason: e.to_string(),
        })
    }

    fn queries_used(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

/// The product of one attack run over a batch of originals.
#[derive(Debug, Clone)]
pub struct AdversarialBatch<F> {
    pub originals: Vec<Array3<F>>,
    pub perturbed: Vec<Array3<F>>,
    /// Per-sample `||perturbed - original||_2`.
    pub l2_norms: Vec<f64>,
    /// Per-sample semantic distance of the returned iterate. Exact for PGD;
    /// the probe-mean estimate for the black-box attack; `None` for the
    /// random baseline, which never queries.
    pub semantic_distances: Option<Vec<f64>>,
    /// Per-sample best-so-far distance after each assessed iteration.
    pub distance_traces: Vec<Vec<f64>>,
    pub queries_used: u64,
    /// True when a query cap ended the run early.
    pub truncated: bool,
}

impl<F: Scalar> AdversarialBatch<F> {
    /// Checks the batch invariants: pixels in `[0, 1]`, norms within the
    /// budget, counts aligned.
    pub fn validate(&self, epsilon: f64) -> Result<(), AttackError> {
        if self.originals.len() != self.perturbed.len()
            || self.l2_norms.len() != self.perturbed.len()
        {
            return Err(AttackError::Contract("misaligned batch fields".into()));
        }
        for (i, (orig, pert)) in self.originals.iter().zip(self.perturbed.iter()).enumerate() {
            if orig.shape() != pert.shape() {
                return Err(AttackError::Contract(format!("sample {i}: shape changed")));
            }
            if pert.iter().any(|v| {
                let x = v.to_f64_c();
                !(0.0..=1.0).contains(&x)
            }) {
                return Err(AttackError::Contract(format!("sample {i}: pixel out of [0,1]")));
            }
            let norm = l2_diff(orig, pert);
            if norm > epsilon + 1e-6 {
                return Err(AttackError::Contract(format!(
                    "sample {i}: perturbation norm {norm} exceeds epsilon {epsilon}"
                )));
            }
            if (norm - self.l2_norms[i]).abs() > 1e-4 {
                return Err(AttackError::Contract(format!(
                    "sample {i}: recorded norm {} vs actual {norm}",
                    self.l2_norms[i]
                )));
            }
        }
        Ok(())
    }
}

/// `||a - b||_2` over whole images.
pub(crate) fn l2_diff<F: Scalar>(a: &Array3<F>, b: &Array3<F>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = (*x - *y).to_f64_c();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Clamps every pixel into `[0, 1]`.
pub(crate) fn clip_unit<F: Scalar>(x: &mut Array3<F>) {
    for v in x.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
        } else if *v > F::one() {
            *v = F::one();
        }
    }
}

pub(crate) fn check_originals<F: Scalar>(originals: &[Array3<F>]) -> Result<(), AttackError> {
    if originals.is_empty() {
        return Err(AttackError::Contract("empty original batch".into()));
    }
    for (i, img) in originals.iter().enumerate() {
        if img.iter().any(|v| {
            let x = v.to_f64_c();
            !(0.0..=1.0).contains(&x)
        }) {
            return Err(AttackError::Contract(format!("original {i} has pixels outside [0,1]")));
        }
    }
    Ok(())
}
