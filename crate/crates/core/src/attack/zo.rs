//! Zeroth-order gradient estimation through the semantic oracle.

use super::distance::{semantic_distance, DistanceMetric};
use super::{AttackError, SemanticOracle};
use crate::rng::standard_normal;
use crate::scalar::Scalar;
use ndarray::{Array1, Array3, Array4, Axis};
use rand_chacha::ChaCha8Rng;

/// Antithetic Gaussian gradient estimate of the semantic distance around
/// `x_adv`:
///
/// `g ~= sum_i [D(f(x + s*u_i), ref) - D(f(x - s*u_i), ref)] * u_i / (2*s*q)`
///
/// over `q/2` i.i.d. unit-Gaussian directions. Consumes exactly
/// `queries_per_iteration` oracle queries. Also returns the probe-mean
/// distance, an assessment of `x_adv` itself that costs nothing extra.
pub fn estimate_gradient_zo<F: Scalar>(
    oracle: &dyn SemanticOracle<F>,
    x_adv: &Array3<F>,
    reference: &Array1<F>,
    queries_per_iteration: usize,
    smoothing_sigma: f64,
    metric: DistanceMetric,
    rng: &mut ChaCha8Rng,
) -> Result<(Array3<F>, f64), AttackError> {
    if queries_per_iteration < 2 || queries_per_iteration % 2 != 0 {
        return Err(AttackError::Budget(format!(
            "queries_per_iteration must be even and >= 2, got {queries_per_iteration}"
        )));
    }
    let pairs = queries_per_iteration / 2;
    let sigma = F::from_f64_c(smoothing_sigma);
    let dims = x_adv.raw_dim();
    let (c, h, w) = (dims[0], dims[1], dims[2]);

    let mut directions: Vec<Array3<F>> = Vec::with_capacity(pairs);
    let mut probes = Array4::zeros((queries_per_iteration, c, h, w));
    for p in 0..pairs {
        let u = Array3::from_shape_fn(dims, |_| standard_normal::<F>(rng));
        {
            let mut plus = probes.index_axis_mut(Axis(0), 2 * p);
            plus.assign(x_adv);
            plus.zip_mut_with(&u, |dst, &uv| *dst = *dst + uv * sigma);
        }
        {
            let mut minus = probes.index_axis_mut(Axis(0), 2 * p + 1);
            minus.assign(x_adv);
            minus.zip_mut_with(&u, |dst, &uv| *dst = *dst - uv * sigma);
        }
        directions.push(u);
    }

    let semantics = oracle.query_batch(&probes)?;
    let mut grad = Array3::<F>::zeros(dims);
    let mut distance_sum = 0.0f64;
    let denom = F::from_f64_c(2.0 * smoothing_sigma * queries_per_iteration as f64);
    for (p, u) in directions.iter().enumerate() {
        let d_plus =
            semantic_distance(semantics.row(2 * p), reference.view(), metric)?;
        let d_minus =
            semantic_distance(semantics.row(2 * p + 1), reference.view(), metric)?;
        distance_sum += d_plus.to_f64_c() + d_minus.to_f64_c();
        let coeff = (d_plus - d_minus) / denom;
        grad.zip_mut_with(u, |g, &uv| *g = *g + uv * coeff);
    }
    Ok((grad, distance_sum / queries_per_iteration as f64))
}
