//! Deterministic RNG construction and seed derivation.
//!
//! Every stochastic step in the crate draws from a [`ChaCha8Rng`] seeded
//! through [`derive_seed`], so reruns with the same configuration reproduce
//! identical streams regardless of thread scheduling: parallel work items
//! each derive their own seed from `(base, indices...)` up front.

use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mixes a base seed with a sequence of stream labels into a new seed.
///
/// Uses the SplitMix64 finalizer, which is stable across platforms.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &label in labels {
        state = state.wrapping_add(label).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix64(state);
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic RNG for the given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A deterministic RNG for `(base, labels...)`, see [`derive_seed`].
pub fn rng_for(base: u64, labels: &[u64]) -> ChaCha8Rng {
    rng_from_seed(derive_seed(base, labels))
}

/// One standard-normal draw, widened through `f64` so that `f32` and `f64`
/// pipelines consume the identical underlying stream.
pub fn standard_normal<F: Scalar>(rng: &mut ChaCha8Rng) -> F {
    // Box-Muller on two uniform draws; rand_distr's ziggurat tables are not
    // guaranteed stable across versions, this is.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    F::from_f64_c(r * (2.0 * std::f64::consts::PI * u2).cos())
}

/// One uniform draw on `[lo, hi)`.
pub fn uniform<F: Scalar>(rng: &mut ChaCha8Rng, lo: F, hi: F) -> F {
    let u: f64 = rng.random();
    lo + (hi - lo) * F::from_f64_c(u)
}
