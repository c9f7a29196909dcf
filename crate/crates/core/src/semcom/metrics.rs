//! Accuracy metrics and the greedy sequence decoder.

use super::pipeline::{ChannelMode, SemComPipeline, TaskOutput};
use super::SemComError;
use crate::datasets::{LabeledImage, PlateSample};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use ndarray::{Array4, ArrayView2};

/// Fixed evaluation batch size; part of the deterministic-evaluation
/// contract (noise streams are derived per chunk).
const EVAL_BATCH: usize = 256;

pub(crate) fn images_to_batch<F: Scalar>(images: &[&crate::Image]) -> Array4<F> {
    let s = images[0].shape();
    let mut out = Array4::zeros((images.len(), s[0], s[1], s[2]));
    for (i, img) in images.iter().enumerate() {
        for (dst, src) in out
            .index_axis_mut(ndarray::Axis(0), i)
            .iter_mut()
            .zip(img.iter())
        {
            *dst = F::from_f64_c(*src as f64);
        }
    }
    out
}

fn argmax_row<F: Scalar>(row: ndarray::ArrayView1<'_, F>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class labels for a sample list at a fixed SNR and seed.
pub fn predict_labels<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    samples: &[LabeledImage],
    snr_db: f64,
    seed: u64,
) -> Result<Vec<usize>, SemComError> {
    let mut preds = Vec::with_capacity(samples.len());
    for (chunk_idx, chunk) in samples.chunks(EVAL_BATCH).enumerate() {
        let refs: Vec<&crate::Image> = chunk.iter().map(|s| &s.pixels).collect();
        let x = images_to_batch::<F>(&refs);
        let mut rng = rng_for(seed, &[0xE7A1, chunk_idx as u64]);
        let out = pipeline.forward(&x, ChannelMode::Awgn { snr_db }, &mut rng)?;
        let scores = out.expect_class();
        for i in 0..scores.shape()[0] {
            preds.push(argmax_row(scores.row(i)));
        }
    }
    Ok(preds)
}

/// Fraction of samples whose argmax score equals the label.
pub fn classify_accuracy<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    samples: &[LabeledImage],
    snr_db: f64,
    seed: u64,
) -> Result<f64, SemComError> {
    if samples.is_empty() {
        return Err(SemComError::EmptyMetric);
    }
    let preds = predict_labels(pipeline, samples, snr_db, seed)?;
    let correct = preds
        .iter()
        .zip(samples.iter())
        .filter(|(p, s)| **p == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Greedy alignment decoding: per-position argmax, collapse repeats, drop
/// blanks (index 0).
pub fn plate_greedy_decode<F: Scalar>(scores: ArrayView2<'_, F>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last = usize::MAX;
    for row in scores.rows() {
        let c = argmax_row(row);
        if c != last && c != crate::nn::CTC_BLANK {
            out.push(c);
        }
        last = c;
    }
    out
}

/// Exact-match sequence accuracy: a plate counts as correct only when every
/// decoded symbol equals the ground truth.
pub fn plate_accuracy<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    samples: &[PlateSample],
    snr_db: f64,
    seed: u64,
) -> Result<f64, SemComError> {
    if samples.is_empty() {
        return Err(SemComError::EmptyMetric);
    }
    let mut correct = 0usize;
    for (chunk_idx, chunk) in samples.chunks(EVAL_BATCH).enumerate() {
        let refs: Vec<&crate::Image> = chunk.iter().map(|s| &s.pixels).collect();
        let x = images_to_batch::<F>(&refs);
        let mut rng = rng_for(seed, &[0xE7A2, chunk_idx as u64]);
        let out = pipeline.forward(&x, ChannelMode::Awgn { snr_db }, &mut rng)?;
        let scores = match out {
            TaskOutput::Seq(s) => s,
            TaskOutput::Class(_) => {
                return Err(SemComError::Contract(
                    "plate_accuracy on a classification pipeline".into(),
                ))
            }
        };
        for (i, sample) in chunk.iter().enumerate() {
            let decoded = plate_greedy_decode(scores.index_axis(ndarray::Axis(0), i));
            if decoded == sample.chars {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
