//! Semantic distance between encoder outputs.

use super::AttackError;
use crate::nn::{kl_softmax, kl_softmax_backward};
use crate::scalar::Scalar;
use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

/// How far apart two semantic vectors are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// `KL(softmax(a) || softmax(b))` - the same measure the defense
    /// minimizes.
    KlSoftmax,
    /// Plain Euclidean distance.
    L2,
}

/// Distance between two semantic vectors; always `>= 0`.
pub fn semantic_distance<F: Scalar>(
    a: ArrayView1<'_, F>,
    b: ArrayView1<'_, F>,
    metric: DistanceMetric,
) -> Result<F, AttackError> {
    if a.len() != b.len() {
        return Err(AttackError::Contract(format!(
            "semantic vectors of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(AttackError::Contract("non-finite semantic vector".into()));
    }
    Ok(match metric {
        DistanceMetric::KlSoftmax => kl_softmax(a, b),
        DistanceMetric::L2 => a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<F>()
            .sqrt(),
    })
}

/// Distance plus its gradient with respect to `a` (the adversarial side).
pub fn semantic_distance_with_grads<F: Scalar>(
    a: ArrayView1<'_, F>,
    b: ArrayView1<'_, F>,
    metric: DistanceMetric,
) -> Result<(F, Array1<F>), AttackError> {
    if a.len() != b.len() {
        return Err(AttackError::Contract(format!(
            "semantic vectors of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(match metric {
        DistanceMetric::KlSoftmax => {
            let g = kl_softmax_backward(a, b);
            (g.value, g.grad_a)
        }
        DistanceMetric::L2 => {
            let diff: Array1<F> = &a.to_owned() - &b;
            let norm = diff.iter().map(|&v| v * v).sum::<F>().sqrt();
            if norm == F::zero() {
                (F::zero(), Array1::zeros(a.len()))
            } else {
                (norm, diff.mapv(|v| v / norm))
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_vectors_have_zero_distance() {
        let a = array![0.4f64, -1.0, 3.0];
        for m in [DistanceMetric::KlSoftmax, DistanceMetric::L2] {
            assert_eq!(semantic_distance(a.view(), a.view(), m).unwrap(), 0.0);
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = array![0.0f64, 1.0];
        let b = array![0.0f64, 1.0, 2.0];
        assert!(semantic_distance(a.view(), b.view(), DistanceMetric::L2).is_err());
    }

    #[test]
    fn kl_softmax_matches_hand_computation() {
        let a = array![0.0f64, 0.0];
        let b = array![(9.0f64).ln(), 0.0];
        let d = semantic_distance(a.view(), b.view(), DistanceMetric::KlSoftmax).unwrap();
        assert!((d - 0.5108).abs() < 1e-3, "{d}");
    }

    #[test]
    fn l2_gradient_points_away_from_reference() {
        let a = array![1.0f64, 2.0];
        let b = array![0.0f64, 0.0];
        let (d, g) = semantic_distance_with_grads(a.view(), b.view(), DistanceMetric::L2).unwrap();
        assert!((d - 5.0f64.sqrt()).abs() < 1e-12);
        // Unit vector along a - b.
        assert!((g[0] - 1.0 / 5.0f64.sqrt()).abs() < 1e-12);
        assert!((g[1] - 2.0 / 5.0f64.sqrt()).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn nonnegative_for_random_pairs(
            a in proptest::collection::vec(-6.0f64..6.0, 8),
            b in proptest::collection::vec(-6.0f64..6.0, 8),
        ) {
            let a = Array1::from_vec(a);
            let b = Array1::from_vec(b);
            for m in [DistanceMetric::KlSoftmax, DistanceMetric::L2] {
                let d = semantic_distance(a.view(), b.view(), m).unwrap();
                proptest::prop_assert!(d >= -1e-12);
            }
        }
    }
}
