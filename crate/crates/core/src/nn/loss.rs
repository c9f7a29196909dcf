//! Classification loss and softmax-KL primitives with analytic gradients.

use super::NnError;
use crate::scalar::Scalar;
use ndarray::{Array1, Array2, ArrayView1};

/// Numerically stable softmax of one row.
pub fn softmax_row<F: Scalar>(row: ArrayView1<'_, F>) -> Array1<F> {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Array1<F> = row.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row<F: Scalar>(row: ArrayView1<'_, F>) -> Array1<F> {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
    row.mapv(|v| v - log_sum)
}

/// Mean cross-entropy over a batch of logits plus its gradient.
pub struct CrossEntropyGrad<F> {
    pub loss: F,
    /// d(loss)/d(logits), shape `(batch, classes)`.
    pub grad: Array2<F>,
}

/// Softmax cross-entropy, averaged over the batch.
pub fn cross_entropy<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
) -> Result<CrossEntropyGrad<F>, NnError> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(NnError::Shape(format!(
            "{} labels for batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::BadLabel(format!("label {bad} >= {k} classes")));
    }
    let inv_b = F::from_f64_c(1.0 / b as f64);
    let mut grad = Array2::zeros((b, k));
    let mut loss = F::zero();
    for (i, &label) in labels.iter().enumerate() {
        let logp = log_softmax_row(logits.row(i));
        loss -= logp[label];
        let mut grow = grad.row_mut(i);
        for j in 0..k {
            grow[j] = (logp[j].exp() - if j == label { F::one() } else { F::zero() }) * inv_b;
        }
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("cross_entropy"));
    }
    Ok(CrossEntropyGrad { loss, grad })
}

/// `KL(softmax(a) || softmax(b))` for one pair of vectors.
pub fn kl_softmax<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> F {
    let log_p = log_softmax_row(a);
    let log_q = log_softmax_row(b);
    log_p
        .iter()
        .zip(log_q.iter())
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum()
}

/// Gradients of `KL(softmax(a) || softmax(b))` with respect to both inputs.
pub struct KlGrads<F> {
    pub value: F,
    pub grad_a: Array1<F>,
    pub grad_b: Array1<F>,
}

/// Closed-form gradients:
/// `dKL/da = p .* (log p - log q - KL)` and `dKL/db = q - p`.
pub fn kl_softmax_backward<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> KlGrads<F> {
    let log_p = log_softmax_row(a);
    let log_q = log_softmax_row(b);
    let value: F = log_p
        .iter()
        .zip(log_q.iter())
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum();
    let grad_a = Array1::from_iter(
        log_p
            .iter()
            .zip(log_q.iter())
            .map(|(&lp, &lq)| lp.exp() * (lp - lq - value)),
    );
    let grad_b = Array1::from_iter(
        log_p
            .iter()
            .zip(log_q.iter())
            .map(|(&lp, &lq)| lq.exp() - lp.exp()),
    );
    KlGrads { value, grad_a, grad_b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};
    use ndarray::array;

    #[test]
    fn softmax_sums_to_one() {
        let s = softmax_row(array![1.0f64, 2.0, 3.0].view());
        assert!((s.sum() - 1.0).abs() < 1e-12);
        assert!(s[2] > s[1] && s[1] > s[0]);
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_small() {
        let logits = array![[20.0f64, 0.0, 0.0], [0.0, 20.0, 0.0]];
        let out = cross_entropy(&logits, &[0, 1]).unwrap();
        assert!(out.loss < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = array![[0.0f64, 0.0]];
        assert!(cross_entropy(&logits, &[2]).is_err());
        assert!(cross_entropy(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let mut logits =
            Array2::from_shape_fn((4, 5), |_| standard_normal::<f64>(&mut rng));
        let labels = [0usize, 3, 2, 4];
        let out = cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..5 {
                let orig = logits[[i, j]];
                logits[[i, j]] = orig + h;
                let up = cross_entropy(&logits, &labels).unwrap().loss;
                logits[[i, j]] = orig - h;
                let down = cross_entropy(&logits, &labels).unwrap().loss;
                logits[[i, j]] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (out.grad[[i, j]] - fd).abs() < 1e-6,
                    "({i},{j}): {} vs {fd}",
                    out.grad[[i, j]]
                );
            }
        }
    }

    #[test]
    fn kl_of_identical_inputs_is_zero() {
        let a = array![0.3f64, -1.0, 2.5];
        assert_eq!(kl_softmax(a.view(), a.view()), 0.0);
    }

    #[test]
    fn kl_halfhalf_vs_ninety_ten() {
        // softmax((0,0)) = (0.5, 0.5); softmax((ln 9, 0)) = (0.9, 0.1).
        // KL = 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1) = 0.510825...
        let a = array![0.0f64, 0.0];
        let b = array![(9.0f64).ln(), 0.0];
        let kl = kl_softmax(a.view(), b.view());
        assert!((kl - 0.5108256237659907).abs() < 1e-9, "kl = {kl}");
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(12);
        let a = Array1::from_shape_fn(6, |_| standard_normal::<f64>(&mut rng));
        let b = Array1::from_shape_fn(6, |_| standard_normal::<f64>(&mut rng));
        let grads = kl_softmax_backward(a.view(), b.view());
        let h = 1e-6;
        for j in 0..6 {
            let mut ap = a.clone();
            ap[j] += h;
            let mut am = a.clone();
            am[j] -= h;
            let fd = (kl_softmax(ap.view(), b.view()) - kl_softmax(am.view(), b.view())) / (2.0 * h);
            assert!((grads.grad_a[j] - fd).abs() < 1e-6, "grad_a[{j}]");

            let mut bp = b.clone();
            bp[j] += h;
            let mut bm = b.clone();
            bm[j] -= h;
            let fd = (kl_softmax(a.view(), bp.view()) - kl_softmax(a.view(), bm.view())) / (2.0 * h);
            assert!((grads.grad_b[j] - fd).abs() < 1e-6, "grad_b[{j}]");
        }
    }

    proptest::proptest! {
        #[test]
        fn kl_nonnegative(
            a in proptest::collection::vec(-8.0f64..8.0, 5),
            b in proptest::collection::vec(-8.0f64..8.0, 5),
        ) {
            let a = Array1::from_vec(a);
            let b = Array1::from_vec(b);
            proptest::prop_assert!(kl_softmax(a.view(), b.view()) >= -1e-12);
        }
    }
}
