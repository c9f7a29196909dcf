//! The black-box semantic noise attack.

use super::distance::DistanceMetric;
use super::project::project_l2_ball;
use super::zo::estimate_gradient_zo;
use super::{
    check_originals, clip_unit, l2_diff, lowfreq_filter, AdversarialBatch, AttackBudget,
    AttackError, SemanticOracle,
};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use ndarray::{Array3, Axis};
use rayon::prelude::*;

struct SampleResult<F> {
    perturbed: Array3<F>,
    distance: f64,
    trace: Vec<f64>,
    queries: u64,
    truncated: bool,
}

/// Crafts adversarial samples that maximize semantic distance to the benign
/// encodings, observing the system only through `oracle`.
///
/// Per sample: cache the benign reference semantics (one query), then for
/// each iteration estimate the distance gradient from
/// `queries_per_iteration` probes, ascend along its direction by
/// `step_size`, optionally confine the perturbation to low frequencies,
/// project onto the epsilon ball, and clip to `[0, 1]`. The probe mean
/// doubles as an assessment of the current iterate, and the best assessed
/// iterate is returned, so total queries are exactly
/// `batch * (1 + iterations * queries_per_iteration)`.
pub fn sna_attack<F: Scalar>(
    oracle: &dyn SemanticOracle<F>,
    originals: &[Array3<F>],
    budget: &AttackBudget,
) -> Result<AdversarialBatch<F>, AttackError> {
    budget.validate()?;
    check_originals(originals)?;
    if budget.epsilon == 0.0 {
        return Ok(AdversarialBatch {
            originals: originals.to_vec(),
            perturbed: originals.to_vec(),
            l2_norms: vec![0.0; originals.len()],
            semantic_distances: Some(vec![0.0; originals.len()]),
            distance_traces: vec![Vec::new(); originals.len()],
            queries_used: 0,
            truncated: false,
        });
    }

    // Per-sample query allowance under an optional global cap, so parallel
    // workers never race the budget.
    let per_sample_cap = budget
        .max_total_queries
        .map(|cap| cap / originals.len() as u64);

    let results: Vec<Result<SampleResult<F>, AttackError>> = originals
        .par_iter()
        .enumerate()
        .map(|(idx, original)| attack_one(oracle, original, budget, idx, per_sample_cap))
        .collect();

    let mut batch = AdversarialBatch {
        originals: originals.to_vec(),
        perturbed: Vec::with_capacity(originals.len()),
        l2_norms: Vec::with_capacity(originals.len()),
        semantic_distances: Some(Vec::with_capacity(originals.len())),
        distance_traces: Vec::with_capacity(originals.len()),
        queries_used: 0,
        truncated: false,
    };
    for r in results {
        let r = r?;
        batch.queries_used += r.queries;
        batch.truncated |= r.truncated;
        batch.l2_norms.push(l2_diff(&batch.originals[batch.perturbed.len()], &r.perturbed));
        batch.perturbed.push(r.perturbed);
        batch.semantic_distances.as_mut().expect("present").push(r.distance);
        batch.distance_traces.push(r.trace);
    }
    Ok(batch)
}

fn attack_one<F: Scalar>(
    oracle: &dyn SemanticOracle<F>,
    original: &Array3<F>,
    budget: &AttackBudget,
    sample_idx: usize,
    per_sample_cap: Option<u64>,
) -> Result<SampleResult<F>, AttackError> {
    let mut rng = rng_for(budget.seed, &[0x5A7, sample_idx as u64]);
    let q = budget.queries_per_iteration as u64;

    // Step 3 on benign data: the cached reference encoding.
    let reference = oracle
        .query_batch(&original.clone().insert_axis(Axis(0)))?
        .index_axis(Axis(0), 0)
        .to_owned();
    let mut queries = 1u64;

    let mut x_adv = original.clone();
    let mut best = original.clone();
    let mut best_distance = f64::NEG_INFINITY;
    let mut trace = Vec::with_capacity(budget.max_iterations);
    let mut truncated = false;

    for _iteration in 0..budget.max_iterations {
        if let Some(cap) = per_sample_cap {
            if queries + q > cap {
                truncated = true;
                break;
            }
        }
        let (grad, assessed) = estimate_gradient_zo(
            oracle,
            &x_adv,
            &reference,
            budget.queries_per_iteration,
            budget.smoothing_sigma,
            budget.metric,
            &mut rng,
        )?;
        queries += q;
        if assessed > best_distance {
            best_distance = assessed;
            best.assign(&x_adv);
        }
        trace.push(best_distance);

        let grad_norm = grad.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
        if grad_norm > 0.0 {
            let scale = F::from_f64_c(budget.step_size / grad_norm);
            x_adv.zip_mut_with(&grad, |x, &g| *x = *x + g * scale);
        }
        let mut delta = &x_adv - original;
        if let Some(cutoff) = budget.freq_cutoff {
            delta = lowfreq_filter(&delta, cutoff);
        }
        let delta = project_l2_ball(delta, budget.epsilon);
        x_adv = original + &delta;
        clip_unit(&mut x_adv);
    }

    Ok(SampleResult {
        perturbed: best,
        distance: best_distance.max(0.0),
        trace,
        queries,
        truncated,
    })
}
