//! SDM training loop, inner maximization, and the composite loss.

use crate::attack::project_l2_ball;
use crate::datasets::TaskData;
use crate::nn::{kl_softmax_backward, Adam};
use crate::rng::{rng_for, standard_normal};
use crate::scalar::Scalar;
use crate::semcom::{
    sample_training_snr, ChannelConfig, ChannelMode, EpochRecord, PipelineConfig, SemComError,
    SemComPipeline, TrainOptions,
};
use ndarray::{Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Defense hyperparameters. `inner_epsilon = 0` degenerates to natural
/// training (the robust term vanishes identically).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SdmConfig {
    /// Robust-loss coefficient.
    pub lambda: f64,
    /// Ascent steps when generating online adversarial samples.
    pub inner_iterations: usize,
    pub inner_step_size: f64,
    /// L2 budget of the online adversarial samples.
    pub inner_epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SdmConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            inner_iterations: 10,
            inner_step_size: 0.9,
            inner_epsilon: 3.6,
            epochs: 15,
            seed: 0,
        }
    }
}

impl SdmConfig {
    pub fn validate(&self) -> Result<(), SemComError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SemComError::Config(format!("lambda {} invalid", self.lambda)));
        }
        if self.inner_iterations == 0 {
            return Err(SemComError::Config("inner_iterations must be >= 1".into()));
        }
        if !(self.inner_epsilon >= 0.0 && self.inner_epsilon.is_finite()) {
            return Err(SemComError::Config(format!(
                "inner_epsilon {} invalid",
                self.inner_epsilon
            )));
        }
        if !(self.inner_step_size > 0.0) {
            return Err(SemComError::Config("inner_step_size must be positive".into()));
        }
        Ok(())
    }
}

/// Loss decomposition of one training batch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SdmBatchReport {
    pub epoch: usize,
    pub batch: usize,
    pub natural_loss: f64,
    pub robust_loss: f64,
    pub total_loss: f64,
    /// Mean KL reached by the inner maximization.
    pub mean_inner_distance: f64,
}

/// Generates online adversarial samples: `inner_iterations` white-box ascent
/// steps on `KL(softmax(enc(x_adv)) || softmax(enc(x)))`, L2-projected to
/// `inner_epsilon` around each sample and clipped to `[0, 1]`. Starts from
/// `x` plus a small jitter.
pub fn sdm_inner_maximize<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    batch: &Array4<F>,
    config: &SdmConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array4<F>, SemComError> {
    let n = batch.shape()[0];
    let benign_sem = pipeline.encode(batch)?;

    let jitter_std = (config.inner_epsilon * 1e-2).min(1e-3);
    let mut x_adv = batch.clone();
    for v in x_adv.iter_mut() {
        *v = *v + standard_normal::<F>(rng) * F::from_f64_c(jitter_std);
    }
    project_and_clip(&mut x_adv, batch, config.inner_epsilon);

    for _step in 0..config.inner_iterations {
        let (sem, caches) = pipeline.encode_cached(&x_adv)?;
        let mut g_sem = Array2::zeros(sem.raw_dim());
        for i in 0..n {
            let grads = kl_softmax_backward(sem.row(i), benign_sem.row(i));
            if !grads.value.is_finite() {
                return Err(SemComError::Diverged {
                    epoch: 0,
                    reason: "non-finite inner KL".into(),
                });
            }
            g_sem.row_mut(i).assign(&grads.grad_a);
        }
        let gx = pipeline.encoder_backward_input(&caches, g_sem);
        for i in 0..n {
            let gi = gx.index_axis(Axis(0), i);
            let gnorm = gi.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
            if gnorm == 0.0 {
                continue;
            }
            let scale = F::from_f64_c(config.inner_step_size / gnorm);
            let mut xi = x_adv.index_axis_mut(Axis(0), i);
            xi.zip_mut_with(&gi, |x, &g| *x = *x + g * scale);
        }
        project_and_clip(&mut x_adv, batch, config.inner_epsilon);
    }
    Ok(x_adv)
}

fn project_and_clip<F: Scalar>(x_adv: &mut Array4<F>, benign: &Array4<F>, epsilon: f64) {
    let n = x_adv.shape()[0];
    for i in 0..n {
        let xb = benign.index_axis(Axis(0), i).to_owned();
        let delta = &x_adv.index_axis(Axis(0), i).to_owned() - &xb;
        let delta = project_l2_ball(delta, epsilon);
        let mut clipped = xb + delta;
        for v in clipped.iter_mut() {
            if *v < F::zero() {
                *v = F::zero();
            } else if *v > F::one() {
                *v = F::one();
            }
        }
        x_adv.index_axis_mut(Axis(0), i).assign(&clipped);
    }
}

/// Mean KL between encodings of `x_adv` and the benign batch.
pub(crate) fn robust_distance<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    x: &Array4<F>,
    x_adv: &Array4<F>,
) -> Result<f64, SemComError> {
    let sem_ben = pipeline.encode(x)?;
    let sem_adv = pipeline.encode(x_adv)?;
    let n = x.shape()[0];
    let mut total = 0.0;
    for i in 0..n {
        total += crate::nn::kl_softmax(sem_adv.row(i), sem_ben.row(i)).to_f64_c();
    }
    Ok(total / n as f64)
}

/// Composite loss on one batch plus the parameter gradients of
/// `natural + lambda * robust`.
///
/// The natural term runs the full noisy pipeline; the robust term
/// differentiates the encoder through both the adversarial and the benign
/// branch.
pub fn sdm_loss<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    x: &Array4<F>,
    target: &crate::semcom::BatchTarget,
    x_adv: &Array4<F>,
    lambda: f64,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(SdmBatchReport, Vec<Vec<F>>), SemComError> {
    let n = x.shape()[0];
    let (out, cache) =
        pipeline.forward_cached(x, ChannelMode::Awgn { snr_db }, rng)?;
    let (natural_loss, gy) = crate::semcom::train::task_loss(out, target)?;
    let (_, mut grads) = pipeline.backward(&cache, gy);

    let mut robust_loss = 0.0f64;
    if lambda != 0.0 {
        let (sem_adv, caches_adv) = pipeline.encode_cached(x_adv)?;
        let (sem_ben, caches_ben) = pipeline.encode_cached(x)?;
        let mut g_adv = Array2::zeros(sem_adv.raw_dim());
        let mut g_ben = Array2::zeros(sem_ben.raw_dim());
        let inv_n = F::from_f64_c(1.0 / n as f64);
        for i in 0..n {
            let kl = kl_softmax_backward(sem_adv.row(i), sem_ben.row(i));
            robust_loss += kl.value.to_f64_c();
            g_adv.row_mut(i).assign(&kl.grad_a.mapv(|v| v * inv_n));
            g_ben.row_mut(i).assign(&kl.grad_b.mapv(|v| v * inv_n));
        }
        robust_loss /= n as f64;

        let (_, enc_grads_adv) = pipeline.encoder_backward_full(&caches_adv, g_adv);
        let (_, enc_grads_ben) = pipeline.encoder_backward_full(&caches_ben, g_ben);
        let lf = F::from_f64_c(lambda);
        for (k, (ga, gb)) in enc_grads_adv.iter().zip(enc_grads_ben.iter()).enumerate() {
            for (dst, (a, b)) in grads[k].iter_mut().zip(ga.iter().zip(gb.iter())) {
                *dst = *dst + lf * (*a + *b);
            }
        }
    }

    let natural_loss = natural_loss.to_f64_c();
    let report = SdmBatchReport {
        epoch: 0,
        batch: 0,
        natural_loss,
        robust_loss,
        total_loss: natural_loss + lambda * robust_loss,
        mean_inner_distance: robust_loss,
    };
    Ok((report, grads))
}

enum DefenseMode {
    Sdm,
    Random,
}

fn train_defended<F: Scalar>(
    train: &TaskData,
    pipeline_config: &PipelineConfig,
    channel_config: &ChannelConfig,
    sdm: &SdmConfig,
    opts: &TrainOptions,
    mode: DefenseMode,
) -> Result<(SemComPipeline<F>, Vec<EpochRecord>, Vec<SdmBatchReport>), SemComError> {
    crate::semcom::train::check_task_data(train, pipeline_config)?;
    channel_config.validate()?;
    sdm.validate()?;
    let mut pipeline = SemComPipeline::<F>::build(pipeline_config)?;
    let mut optimizer = Adam::new(F::from_f64_c(opts.learning_rate));
    let mut history = Vec::with_capacity(sdm.epochs);
    let mut reports = Vec::new();
    let n = train.len();
    use rand::seq::SliceRandom;

    for epoch in 0..sdm.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(sdm.seed, &[0xE9, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(opts.batch_size).enumerate() {
            // Main stream: SNR draw + channel noise, identical to natural
            // training. The inner loop draws from its own stream so lambda=0
            // reproduces natural training bit for bit.
            let mut rng = rng_for(sdm.seed, &[0xBA, epoch as u64, batch_idx as u64]);
            let snr_db = sample_training_snr(channel_config, &mut rng);
            let (x, target) = crate::semcom::train::gather_batch::<F>(train, chunk);

            let x_adv = if sdm.lambda == 0.0 {
                None
            } else {
                let mut inner_rng =
                    rng_for(sdm.seed, &[0x1AD, epoch as u64, batch_idx as u64]);
                Some(match mode {
                    DefenseMode::Sdm => sdm_inner_maximize(&pipeline, &x, sdm, &mut inner_rng)?,
                    DefenseMode::Random => {
                        random_disturbance(&x, sdm.inner_epsilon, &mut inner_rng)
                    }
                })
            };

            let (mut report, grads) = match &x_adv {
                Some(adv) => {
                    sdm_loss(&pipeline, &x, &target, adv, sdm.lambda, snr_db, &mut rng)?
                }
                None => sdm_loss(&pipeline, &x, &target, &x, 0.0, snr_db, &mut rng)?,
            };
            report.epoch = epoch;
            report.batch = batch_idx;
            if !report.total_loss.is_finite() {
                return Err(SemComError::Diverged {
                    epoch,
                    reason: format!("batch {batch_idx} total loss {}", report.total_loss),
                });
            }
            let mut params = pipeline.param_slices_mut();
            optimizer.step(&mut params, &grads);
            loss_sum += report.total_loss;
            batches += 1;
            reports.push(report);
        }
        let probe_seed = crate::rng::derive_seed(sdm.seed, &[0xACC, epoch as u64]);
        let accuracy = crate::semcom::train::probe_accuracy(
            &pipeline,
            train,
            channel_config.snr_db_max,
            probe_seed,
        )?;
        history.push(EpochRecord { epoch, loss: loss_sum / batches.max(1) as f64, accuracy });
    }
    Ok((pipeline, history, reports))
}

fn random_disturbance<F: Scalar>(
    x: &Array4<F>,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Array4<F> {
    let mut out = x.clone();
    let n = x.shape()[0];
    for i in 0..n {
        let xi = x.index_axis(Axis(0), i).to_owned();
        let noise =
            ndarray::Array3::from_shape_fn(xi.raw_dim(), |_| standard_normal::<F>(rng));
        let norm = noise.iter().map(|&v| (v * v).to_f64_c()).sum::<f64>().sqrt();
        if norm == 0.0 || epsilon == 0.0 {
            continue;
        }
        let scale = F::from_f64_c(epsilon / norm);
        let mut adv = xi + noise.mapv(|v| v * scale);
        for v in adv.iter_mut() {
            if *v < F::zero() {
                *v = F::zero();
            } else if *v > F::one() {
                *v = F::one();
            }
        }
        out.index_axis_mut(Axis(0), i).assign(&adv);
    }
    out
}

/// Adversarial training with maximized online samples; checkpoint callers
/// tag the result "sdm".
pub fn train_sdm<F: Scalar>(
    train: &TaskData,
    pipeline_config: &PipelineConfig,
    channel_config: &ChannelConfig,
    sdm: &SdmConfig,
    opts: &TrainOptions,
) -> Result<(SemComPipeline<F>, Vec<EpochRecord>, Vec<SdmBatchReport>), SemComError> {
    train_defended(train, pipeline_config, channel_config, sdm, opts, DefenseMode::Sdm)
}

/// Baseline defense: identical loop, but the online samples are random
/// disturbances of norm `inner_epsilon` instead of maximized ones.
pub fn train_random_defense<F: Scalar>(
    train: &TaskData,
    pipeline_config: &PipelineConfig,
    channel_config: &ChannelConfig,
    sdm: &SdmConfig,
    opts: &TrainOptions,
) -> Result<(SemComPipeline<F>, Vec<EpochRecord>, Vec<SdmBatchReport>), SemComError> {
    train_defended(train, pipeline_config, channel_config, sdm, opts, DefenseMode::Random)
}
