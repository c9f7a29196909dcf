//! Random-noise baseline: stochastic disturbance at the same attack
//! strength, no optimization.

use super::{check_originals, clip_unit, l2_diff, AdversarialBatch, AttackError};
use crate::rng::{rng_for, standard_normal};
use crate::scalar::Scalar;
use ndarray::Array3;

/// Adds Gaussian noise scaled to L2 norm exactly `epsilon` (before
/// clipping) to every sample.
pub fn random_attack<F: Scalar>(
    originals: &[Array3<F>],
    epsilon: f64,
    seed: u64,
) -> Result<AdversarialBatch<F>, AttackError> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(AttackError::Budget(format!("epsilon {epsilon} invalid")));
    }
    check_originals(originals)?;
    let mut perturbed = Vec::with_capacity(originals.len());
    let mut l2_norms = Vec::with_capacity(originals.len());
    for (idx, original) in originals.iter().enumerate() {
        if epsilon == 0.0 {
            perturbed.push(original.clone());
            l2_norms.push(0.0);
            continue;
        }
        let mut rng = rng_for(seed, &[0xA4D, idx as u64]);
        let noise = Array3::from_shape_fn(original.raw_dim(), |_| standard_normal::<F>(&mut rng));
        let norm = noise.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
        let scale = F::from_f64_c(epsilon / norm);
        let mut x = original + &noise.mapv(|v| v * scale);
        clip_unit(&mut x);
        l2_norms.push(l2_diff(original, &x));
        perturbed.push(x);
    }
    Ok(AdversarialBatch {
        originals: originals.to_vec(),
        perturbed,
        l2_norms,
        semantic_distances: None,
        distance_traces: vec![Vec::new(); originals.len()],
        queries_used: 0,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn originals(n: usize, seed: u64) -> Vec<Array3<f32>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                Array3::from_shape_fn((3, 8, 8), |_| crate::rng::uniform(&mut rng, 0.2, 0.8))
            })
            .collect()
    }

    #[test]
    fn preclip_norm_is_exactly_epsilon() {
        // Interior pixels in [0.2, 0.8] and a small epsilon: clipping never
        // engages, so the recorded norms equal epsilon.
        let xs = originals(5, 1);
        let batch = random_attack(&xs, 0.05, 7).unwrap();
        for norm in &batch.l2_norms {
            assert!((norm - 0.05).abs() < 1e-6, "norm {norm}");
        }
        batch.validate(0.05).unwrap();
    }

    #[test]
    fn zero_epsilon_is_the_identity() {
        let xs = originals(3, 2);
        let batch = random_attack(&xs, 0.0, 7).unwrap();
        for (o, p) in batch.originals.iter().zip(batch.perturbed.iter()) {
            assert_eq!(o, p);
        }
    }

    #[test]
    fn clipping_keeps_pixels_in_range() {
        let xs = originals(4, 3);
        let batch = random_attack(&xs, 50.0, 9).unwrap();
        batch.validate(50.0).unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let xs = originals(3, 4);
        let a = random_attack(&xs, 0.3, 11).unwrap();
        let b = random_attack(&xs, 0.3, 11).unwrap();
        for (x, y) in a.perturbed.iter().zip(b.perturbed.iter()) {
            assert_eq!(x, y);
        }
        let c = random_attack(&xs, 0.3, 12).unwrap();
        assert_ne!(a.perturbed[0], c.perturbed[0]);
    }
}
