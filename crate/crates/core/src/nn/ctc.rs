//! Blank-aligned, alignment-free sequence loss (CTC) with analytic gradients.
//!
//! The receiver decodes greedily (argmax, collapse repeats, drop blanks), so
//! training uses the matching alignment-free objective: the negative log
//! probability of the label sequence summed over all alignments whose
//! collapse equals the label. Blank index is always 0.

use super::NnError;
use crate::scalar::Scalar;
use ndarray::{Array2, Array3};

/// Index of the blank symbol in every score matrix.
pub const BLANK: usize = 0;

/// Loss value and gradient with respect to the raw logits.
pub struct CtcGrad<F> {
    /// Mean loss over the batch.
    pub loss: F,
    /// d(loss)/d(logits), shape `(batch, positions, alphabet)`.
    pub grad: Array3<F>,
}

/// Mean CTC loss over a batch of logits `(batch, positions, alphabet)` and
/// per-sample label sequences (alphabet indices, no blanks).
pub fn ctc_loss<F: Scalar>(
    logits: &Array3<F>,
    labels: &[Vec<usize>],
) -> Result<CtcGrad<F>, NnError> {
    let (b, t, k) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    if labels.len() != b {
        return Err(NnError::Shape(format!(
            "{} label sequences for batch of {b}",
            labels.len()
        )));
    }
    let inv_b = F::from_f64_c(1.0 / b as f64);
    let mut grad = Array3::zeros((b, t, k));
    let mut total = F::zero();
    for (i, label) in labels.iter().enumerate() {
        let sample = logits.index_axis(ndarray::Axis(0), i).to_owned();
        let (loss, g) = ctc_single(&sample, label, t, k)?;
        total += loss;
        let mut gi = grad.index_axis_mut(ndarray::Axis(0), i);
        gi.assign(&g);
        gi.mapv_inplace(|v| v * inv_b);
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("ctc_loss"));
    }
    Ok(CtcGrad { loss, grad })
}

fn ctc_single<F: Scalar>(
    logits: &Array2<F>,
    label: &[usize],
    t_len: usize,
    k: usize,
) -> Result<(F, Array2<F>), NnError> {
    if label.is_empty() {
        return Err(NnError::BadLabel("empty label sequence".into()));
    }
    if let Some(&bad) = label.iter().find(|&&c| c == BLANK || c >= k) {
        return Err(NnError::BadLabel(format!(
            "symbol {bad} outside non-blank alphabet of size {k}"
        )));
    }
    // Minimum frames: every symbol plus a blank between repeated neighbours.
    let mut min_t = label.len();
    for w in label.windows(2) {
        if w[0] == w[1] {
            min_t += 1;
        }
    }
    if t_len < min_t {
        return Err(NnError::BadLabel(format!(
            "label needs at least {min_t} positions, logits have {t_len}"
        )));
    }

    // Extended label: blank-interleaved, length 2U+1.
    let s_len = 2 * label.len() + 1;
    let ext = |s: usize| -> usize {
        if s % 2 == 0 {
            BLANK
        } else {
            label[s / 2]
        }
    };

    // Work in f64 log space regardless of F for stability.
    let logp: Vec<Vec<f64>> = (0..t_len)
        .map(|ti| {
            let row = logits.row(ti);
            let lsm = super::log_softmax_row(row);
            lsm.iter().map(|v| v.to_f64_c()).collect()
        })
        .collect();

    let neg_inf = f64::NEG_INFINITY;
    let lse = |a: f64, b: f64| -> f64 {
        if a == neg_inf {
            b
        } else if b == neg_inf {
            a
        } else {
            let m = a.max(b);
            m + ((a - m).exp() + (b - m).exp()).ln()
        }
    };

    let mut alpha = vec![vec![neg_inf; s_len]; t_len];
    alpha[0][0] = logp[0][BLANK];
    if s_len > 1 {
        alpha[0][1] = logp[0][ext(1)];
    }
    for ti in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[ti - 1][s];
            if s >= 1 {
                acc = lse(acc, alpha[ti - 1][s - 1]);
            }
            if s >= 2 && ext(s) != BLANK && ext(s) != ext(s - 2) {
                acc = lse(acc, alpha[ti - 1][s - 2]);
            }
            alpha[ti][s] = acc + logp[ti][ext(s)];
        }
    }
    let log_z = lse(alpha[t_len - 1][s_len - 1], alpha[t_len - 1][s_len - 2]);

    let mut beta = vec![vec![neg_inf; s_len]; t_len];
    beta[t_len - 1][s_len - 1] = logp[t_len - 1][BLANK];
    beta[t_len - 1][s_len - 2] = logp[t_len - 1][ext(s_len - 2)];
    for ti in (0..t_len - 1).rev() {
        for s in (0..s_len).rev() {
            let mut acc = beta[ti + 1][s];
            if s + 1 < s_len {
                acc = lse(acc, beta[ti + 1][s + 1]);
            }
            if s + 2 < s_len && ext(s + 2) != BLANK && ext(s + 2) != ext(s) {
                acc = lse(acc, beta[ti + 1][s + 2]);
            }
            beta[ti][s] = acc + logp[ti][ext(s)];
        }
    }

    // Posterior symbol occupancy; gradient wrt logits is softmax - occupancy.
    let mut grad = Array2::zeros((t_len, k));
    for ti in 0..t_len {
        let mut occupancy = vec![neg_inf; k];
        for s in 0..s_len {
            let c = ext(s);
            // alpha and beta both include the emission at ti; divide once.
            let g = alpha[ti][s] + beta[ti][s] - logp[ti][c];
            occupancy[c] = lse(occupancy[c], g);
        }
        for c in 0..k {
            let p = logp[ti][c].exp();
            let occ = (occupancy[c] - log_z).exp();
            grad[[ti, c]] = F::from_f64_c(p - occ);
        }
    }
    Ok((F::from_f64_c(-log_z), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    /// Brute-force reference: enumerate every alignment path of length T,
    /// collapse it, and sum the probabilities of paths matching the label.
    fn brute_force_nll(logits: &Array2<f64>, label: &[usize]) -> f64 {
        let (t, k) = (logits.shape()[0], logits.shape()[1]);
        let logp: Vec<Vec<f64>> = (0..t)
            .map(|ti| {
                let lsm = crate::nn::log_softmax_row(logits.row(ti));
                lsm.to_vec()
            })
            .collect();
        let mut total = 0.0f64;
        let mut path = vec![0usize; t];
        loop {
            let collapsed: Vec<usize> = {
                let mut out = Vec::new();
                let mut last = usize::MAX;
                for &c in &path {
                    if c != last && c != BLANK {
                        out.push(c);
                    }
                    last = c;
                }
                out
            };
            if collapsed == label {
                let lp: f64 = path.iter().enumerate().map(|(ti, &c)| logp[ti][c]).sum();
                total += lp.exp();
            }
            // Next path in lexicographic order.
            let mut pos = t;
            loop {
                if pos == 0 {
                    return -total.ln();
                }
                pos -= 1;
                path[pos] += 1;
                if path[pos] < k {
                    break;
                }
                path[pos] = 0;
            }
        }
    }

    fn random_logits(seed: u64, t: usize, k: usize) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        Array2::from_shape_fn((t, k), |_| standard_normal::<f64>(&mut rng))
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for (seed, t, k, label) in [
            (1u64, 3usize, 3usize, vec![1usize]),
            (2, 4, 3, vec![1, 2]),
            (3, 5, 3, vec![1, 1]),
            (4, 4, 4, vec![2, 3, 1]),
            (5, 5, 3, vec![2, 2]),
        ] {
            let logits = random_logits(seed, t, k);
            let expected = brute_force_nll(&logits, &label);
            let batch = logits.clone().insert_axis(ndarray::Axis(0));
            let got = ctc_loss(&batch, &[label.clone()]).unwrap().loss;
            assert!(
                (got - expected).abs() < 1e-10,
                "seed {seed}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = random_logits(7, 5, 4);
        let label = vec![1usize, 3];
        let batch = logits.clone().insert_axis(ndarray::Axis(0));
        let out = ctc_loss(&batch, &[label.clone()]).unwrap();
        let h = 1e-6;
        for ti in 0..5 {
            for c in 0..4 {
                let mut up = logits.clone();
                up[[ti, c]] += h;
                let mut down = logits.clone();
                down[[ti, c]] -= h;
                let fu = ctc_loss(&up.insert_axis(ndarray::Axis(0)), &[label.clone()])
                    .unwrap()
                    .loss;
                let fd = ctc_loss(&down.insert_axis(ndarray::Axis(0)), &[label.clone()])
                    .unwrap()
                    .loss;
                let fdg = (fu - fd) / (2.0 * h);
                let g = out.grad[[0, ti, c]];
                assert!((g - fdg).abs() < 1e-5, "({ti},{c}): {g} vs {fdg}");
            }
        }
    }

    #[test]
    fn rejects_impossible_and_invalid_labels() {
        let logits = random_logits(9, 2, 3).insert_axis(ndarray::Axis(0));
        // Needs 3 frames for a repeated symbol.
        assert!(ctc_loss(&logits, &[vec![1, 1]]).is_err());
        assert!(ctc_loss(&logits, &[vec![]]).is_err());
        assert!(ctc_loss(&logits, &[vec![BLANK]]).is_err());
        assert!(ctc_loss(&logits, &[vec![3]]).is_err());
    }

    #[test]
    fn certain_alignment_gives_near_zero_loss() {
        // Logits strongly favouring "1 blank 2" decode to [1, 2] with
        // probability ~1, so the loss is ~0.
        let mut logits = Array2::from_elem((3, 3), -30.0f64);
        logits[[0, 1]] = 30.0;
        logits[[1, 0]] = 30.0;
        logits[[2, 2]] = 30.0;
        let out = ctc_loss(&logits.insert_axis(ndarray::Axis(0)), &[vec![1, 2]]).unwrap();
        assert!(out.loss < 1e-6, "loss {}", out.loss);
    }
}
