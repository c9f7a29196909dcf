//! White-box PGD on the semantic distance: same update rule as the
//! black-box attack but with exact encoder gradients. Used to upper-bound
//! the black-box attack and to drive the defense's inner loop.

use super::distance::semantic_distance_with_grads;
use super::project::project_l2_ball;
use super::{
    check_originals, clip_unit, l2_diff, lowfreq_filter, AdversarialBatch, AttackBudget,
    AttackError,
};
use crate::scalar::Scalar;
use crate::semcom::SemComPipeline;
use ndarray::{Array2, Array3, Array4, Axis};

/// PGD ascent on the semantic distance with analytic gradients. The whole
/// batch advances together; per-sample steps are normalized individually.
pub fn pgd_whitebox_attack<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    originals: &[Array3<F>],
    budget: &AttackBudget,
) -> Result<AdversarialBatch<F>, AttackError> {
    budget.validate()?;
    check_originals(originals)?;
    let n = originals.len();
    if budget.epsilon == 0.0 || budget.max_iterations == 0 {
        return Ok(AdversarialBatch {
            originals: originals.to_vec(),
            perturbed: originals.to_vec(),
            l2_norms: vec![0.0; n],
            semantic_distances: Some(vec![0.0; n]),
            distance_traces: vec![Vec::new(); n],
            queries_used: 0,
            truncated: false,
        });
    }

    let dims = originals[0].raw_dim();
    let mut batch = Array4::zeros((n, dims[0], dims[1], dims[2]));
    for (i, img) in originals.iter().enumerate() {
        batch.index_axis_mut(Axis(0), i).assign(img);
    }
    let reference = pipeline
        .encode(&batch)
        .map_err(|e| AttackError::Contract(e.to_string()))?;

    let mut x_adv = batch.clone();
    let mut best = batch.clone();
    let mut best_distance = vec![f64::NEG_INFINITY; n];
    let mut traces = vec![Vec::with_capacity(budget.max_iterations + 1); n];

    let mut assess_and_grad = |x: &Array4<F>,
                               iteration: usize|
     -> Result<(Vec<f64>, Array4<F>), AttackError> {
        let (sem, caches) = pipeline
            .encode_cached(x)
            .map_err(|e| AttackError::Contract(e.to_string()))?;
        let mut g_sem = Array2::zeros(sem.raw_dim());
        let mut distances = Vec::with_capacity(n);
        for i in 0..n {
            let (d, g) =
                semantic_distance_with_grads(sem.row(i), reference.row(i), budget.metric)?;
            if !d.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(AttackError::NonFinite { iteration });
            }
            distances.push(d.to_f64_c());
            g_sem.row_mut(i).assign(&g);
        }
        let gx = pipeline.encoder_backward_input(&caches, g_sem);
        Ok((distances, gx))
    };

    for iteration in 0..budget.max_iterations {
        let (distances, gx) = assess_and_grad(&x_adv, iteration)?;
        for i in 0..n {
            if distances[i] > best_distance[i] {
                best_distance[i] = distances[i];
                best.index_axis_mut(Axis(0), i).assign(&x_adv.index_axis(Axis(0), i));
            }
            traces[i].push(best_distance[i]);
        }
        for i in 0..n {
            let gi = gx.index_axis(Axis(0), i);
            let gnorm = gi.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
            if gnorm == 0.0 {
                continue;
            }
            let scale = F::from_f64_c(budget.step_size / gnorm);
            let mut xi = x_adv.index_axis_mut(Axis(0), i);
            xi.zip_mut_with(&gi, |x, &g| *x = *x + g * scale);
            let mut delta = &xi.to_owned() - &batch.index_axis(Axis(0), i);
            if let Some(cutoff) = budget.freq_cutoff {
                delta = lowfreq_filter(&delta, cutoff);
            }
            let delta = project_l2_ball(delta, budget.epsilon);
            let mut clipped = &batch.index_axis(Axis(0), i).to_owned() + &delta;
            clip_unit(&mut clipped);
            xi.assign(&clipped);
        }
    }
    // Exact assessment of the final iterate; gradients free here because the
    // same pass produces them.
    let (final_distances, _) = assess_and_grad(&x_adv, budget.max_iterations)?;
    for i in 0..n {
        if final_distances[i] > best_distance[i] {
            best_distance[i] = final_distances[i];
            best.index_axis_mut(Axis(0), i).assign(&x_adv.index_axis(Axis(0), i));
        }
        traces[i].push(best_distance[i]);
    }

    let perturbed: Vec<Array3<F>> =
        (0..n).map(|i| best.index_axis(Axis(0), i).to_owned()).collect();
    let l2_norms = originals.iter().zip(perturbed.iter()).map(|(o, p)| l2_diff(o, p)).collect();
    Ok(AdversarialBatch {
        originals: originals.to_vec(),
        perturbed,
        l2_norms,
        semantic_distances: Some(best_distance.iter().map(|d| d.max(0.0)).collect()),
        distance_traces: traces,
        queries_used: 0,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::DistanceMetric;
    use crate::rng::rng_from_seed;
    use crate::semcom::{PipelineConfig, SemComPipeline, TaskKind};

    fn tiny_pipeline(seed: u64) -> SemComPipeline<f64> {
        let cfg = PipelineConfig {
            task: TaskKind::Classification,
            input_shape: (3, 8, 8),
            num_classes: 4,
            d_s: 8,
            d_c: 6,
            encoder_arch: "small_cnn_tiny".into(),
            head_arch: "dense".into(),
            seed,
        };
        SemComPipeline::<f64>::build(&cfg).unwrap()
    }

    fn originals(n: usize, seed: u64) -> Vec<Array3<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| Array3::from_shape_fn((3, 8, 8), |_| crate::rng::uniform(&mut rng, 0.1, 0.9)))
            .collect()
    }

    #[test]
    fn zero_iterations_is_the_identity() {
        let p = tiny_pipeline(1);
        let xs = originals(2, 1);
        let budget = AttackBudget { max_iterations: 0, ..Default::default() };
        let batch = pgd_whitebox_attack(&p, &xs, &budget).unwrap();
        for (o, q) in batch.originals.iter().zip(batch.perturbed.iter()) {
            assert_eq!(o, q);
        }
    }

    #[test]
    fn ascent_is_monotone_and_in_budget() {
        let p = tiny_pipeline(2);
        let xs = originals(3, 2);
        let budget = AttackBudget {
            epsilon: 2.0,
            max_iterations: 15,
            step_size: 0.3,
            ..Default::default()
        };
        let batch = pgd_whitebox_attack(&p, &xs, &budget).unwrap();
        batch.validate(budget.epsilon).unwrap();
        for t in &batch.distance_traces {
            assert!(t.windows(2).all(|w| w[1] >= w[0]));
        }
        let mean: f64 = batch.semantic_distances.as_ref().unwrap().iter().sum::<f64>() / 3.0;
        assert!(mean > 1e-3, "PGD made no progress: {mean}");
    }

    /// Toy linear encoder with a closed-form optimum: for `f(x) = W'x + b`
    /// the L2 semantic distance is `||W' delta||`, whose maximum over the
    /// epsilon ball (box non-binding here) is `epsilon * sigma_max(W)`.
    #[test]
    fn reaches_the_analytic_optimum_of_a_linear_encoder() {
        let cfg = PipelineConfig {
            task: TaskKind::Classification,
            input_shape: (3, 8, 8),
            num_classes: 3,
            d_s: 8,
            d_c: 6,
            encoder_arch: "linear".into(),
            head_arch: "dense".into(),
            seed: 3,
        };
        let p = SemComPipeline::<f64>::build(&cfg).unwrap();
        let x0 = Array3::from_elem((3, 8, 8), 0.5);
        let epsilon = 0.3;
        let budget = AttackBudget {
            epsilon,
            max_iterations: 500,
            step_size: 0.02,
            metric: DistanceMetric::L2,
            ..Default::default()
        };
        let batch = pgd_whitebox_attack(&p, &[x0.clone()], &budget).unwrap();
        let got = batch.semantic_distances.as_ref().unwrap()[0];

        // Independent top singular value via power iteration on W W' (8x8
        // after projecting through the 192x8 weight).
        let optimum = {
            // The encoder's only parameters are the dense weight and bias;
            // weight is (192, 8), stored row-major in the first slice.
            let slices = p.param_slices();
            let w = ndarray::Array2::from_shape_vec((192, 8), slices[0].to_vec()).unwrap();
            let gram = w.t().dot(&w); // (8, 8)
            let mut v = ndarray::Array1::from_elem(8, 1.0f64);
            let mut lambda = 0.0;
            for _ in 0..500 {
                let nv = gram.dot(&v);
                lambda = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
                v = nv.mapv(|x| x / lambda);
            }
            epsilon * lambda.sqrt()
        };
        let rel = (got - optimum).abs() / optimum;
        assert!(rel < 1e-3, "PGD reached {got}, analytic optimum {optimum} (rel {rel})");
    }
}
