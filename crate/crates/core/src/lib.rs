//! Task-oriented semantic communication under adversarial threat.
//!
//! The crate wires together the full experiment chain:
//!
//! - [`datasets`]: GTSRB/CCPD ingestion, plate crops, and a deterministic
//!   synthetic dataset so everything below runs without external downloads.
//! - [`nn`]: small CNN/residual encoders with hand-rolled backprop, Adam,
//!   cross-entropy and blank-aligned sequence (CTC) losses.
//! - [`semcom`]: semantic encoder -> channel codec -> power normalization ->
//!   AWGN channel -> task head, plus natural training and accuracy metrics.
//! - [`attack`]: the black-box semantic noise attack (zeroth-order gradient
//!   ascent on semantic distance), a white-box PGD upper bound, and a
//!   random-noise baseline, all L2-budgeted in pixel space.
//! - [`defense`]: semantic distance minimization training (natural loss plus
//!   a KL robust term over online adversarial samples) and the
//!   random-disturbance baseline defense.
//! - [`eval`]: accuracy-vs-SNR sweeps, CSV result tables, and SVG curve plots.
//!
//! All numeric kernels are generic over [`Scalar`] (`f32` or `f64`). The
//! shipped pipelines run in `f32`; gradient checks run the same code in `f64`.

pub mod attack;
pub mod config;
pub mod datasets;
pub mod defense;
pub mod digest;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod semcom;

pub use scalar::Scalar;

/// Pixel dtype used by datasets, checkpoints, and the CLI chain.
pub type Pixel = f32;

/// A single image in channel-major layout `(channels, height, width)`.
pub type Image = ndarray::Array3<Pixel>;

/// A batch of images, `(batch, channels, height, width)`.
pub type ImageBatch = ndarray::Array4<Pixel>;


/// The production-precision pipeline (what training and the CLI use).
pub type Pipeline = semcom::SemComPipeline<Pixel>;
