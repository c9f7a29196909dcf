//! Natural (non-adversarial) training of a pipeline.

use super::checkpoint::EpochRecord;
use super::metrics::{classify_accuracy, images_to_batch, plate_accuracy};
use super::pipeline::{ChannelMode, SemComPipeline, TaskGrad, TaskOutput};
use super::{sample_training_snr, ChannelConfig, PipelineConfig, SemComError, TaskKind};
use crate::datasets::TaskData;
use crate::nn::{cross_entropy, ctc_loss, Adam};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Optimization knobs shared by every trainer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 32, learning_rate: 2e-3, seed: 0 }
    }
}

/// Per-batch ground truth.
#[derive(Debug, Clone)]
pub enum BatchTarget {
    Labels(Vec<usize>),
    Seqs(Vec<Vec<usize>>),
}

pub(crate) fn gather_batch<F: Scalar>(
    data: &TaskData,
    indices: &[usize],
) -> (ndarray::Array4<F>, BatchTarget) {
    match data {
        TaskData::Classification(samples) => {
            let refs: Vec<&crate::Image> = indices.iter().map(|&i| &samples[i].pixels).collect();
            let labels = indices.iter().map(|&i| samples[i].label).collect();
            (images_to_batch(&refs), BatchTarget::Labels(labels))
        }
        TaskData::Plates(samples) => {
            let refs: Vec<&crate::Image> = indices.iter().map(|&i| &samples[i].pixels).collect();
            let seqs = indices.iter().map(|&i| samples[i].chars.clone()).collect();
            (images_to_batch(&refs), BatchTarget::Seqs(seqs))
        }
    }
}

/// Task loss and its gradient for one forward output.
pub(crate) fn task_loss<F: Scalar>(
    out: TaskOutput<F>,
    target: &BatchTarget,
) -> Result<(F, TaskGrad<F>), SemComError> {
    match (out, target) {
        (TaskOutput::Class(scores), BatchTarget::Labels(labels)) => {
            let ce = cross_entropy(&scores, labels)?;
            Ok((ce.loss, TaskGrad::Class(ce.grad)))
        }
        (TaskOutput::Seq(scores), BatchTarget::Seqs(seqs)) => {
            let ctc = ctc_loss(&scores, seqs)?;
            Ok((ctc.loss, TaskGrad::Seq(ctc.grad)))
        }
        _ => Err(SemComError::Contract("task output does not match targets".into())),
    }
}

pub(crate) fn check_task_data(
    data: &TaskData,
    config: &PipelineConfig,
) -> Result<(), SemComError> {
    let matches = matches!(
        (data, config.task),
        (TaskData::Classification(_), TaskKind::Classification)
            | (TaskData::Plates(_), TaskKind::PlateRecognition)
    );
    if !matches {
        return Err(SemComError::Contract(format!(
            "dataset kind does not match pipeline task {:?}",
            config.task
        )));
    }
    if data.is_empty() {
        return Err(SemComError::Contract("training set is empty".into()));
    }
    Ok(())
}

/// Accuracy on (a deterministic subset of) a dataset, for history records.
pub(crate) fn probe_accuracy<F: Scalar>(
    pipeline: &SemComPipeline<F>,
    data: &TaskData,
    snr_db: f64,
    seed: u64,
) -> Result<f64, SemComError> {
    const PROBE: usize = 512;
    match data {
        TaskData::Classification(samples) => {
            let n = samples.len().min(PROBE);
            classify_accuracy(pipeline, &samples[..n], snr_db, seed)
        }
        TaskData::Plates(samples) => {
            let n = samples.len().min(PROBE);
            plate_accuracy(pipeline, &samples[..n], snr_db, seed)
        }
    }
}

/// Trains with the task loss only. Each batch samples an SNR uniformly from
/// the channel config's training range and draws fresh channel noise.
pub fn train_natural<F: Scalar>(
    train: &TaskData,
    pipeline_config: &PipelineConfig,
    channel_config: &ChannelConfig,
    opts: &TrainOptions,
) -> Result<(SemComPipeline<F>, Vec<EpochRecord>), SemComError> {
    check_task_data(train, pipeline_config)?;
    channel_config.validate()?;
    let mut pipeline = SemComPipeline::<F>::build(pipeline_config)?;
    let mut optimizer = Adam::new(F::from_f64_c(opts.learning_rate));
    let mut history = Vec::with_capacity(opts.epochs);
    let n = train.len();
    let probe_snr = channel_config.snr_db_max;

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(opts.seed, &[0xE9, epoch as u64]));
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(opts.batch_size).enumerate() {
            let mut rng = rng_for(opts.seed, &[0xBA, epoch as u64, batch_idx as u64]);
            let snr_db = sample_training_snr(channel_config, &mut rng);
            let (x, target) = gather_batch::<F>(train, chunk);
            let (out, cache) = pipeline.forward_cached(&x, ChannelMode::Awgn { snr_db }, &mut rng)?;
            let (loss, gy) = task_loss(out, &target)?;
            let loss_f64 = loss.to_f64_c();
            if !loss_f64.is_finite() {
                return Err(SemComError::Diverged {
                    epoch,
                    reason: format!("batch {batch_idx} loss is {loss_f64}"),
                });
            }
            let (_, grads) = pipeline.backward(&cache, gy);
            let mut params = pipeline.param_slices_mut();
            optimizer.step(&mut params, &grads);
            loss_sum += loss_f64;
            batches += 1;
        }
        let probe_seed = crate::rng::derive_seed(opts.seed, &[0xACC, epoch as u64]);
        let accuracy = probe_accuracy(&pipeline, train, probe_snr, probe_seed)?;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / batches.max(1) as f64,
            accuracy,
        });
    }
    Ok((pipeline, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_synthetic, make_synthetic_plates, SyntheticSpec};
    use crate::semcom::Provenance;

    fn desk_config(num_classes: usize, size: usize) -> (PipelineConfig, ChannelConfig) {
        let pc = PipelineConfig {
            task: TaskKind::Classification,
            input_shape: (3, size, size),
            num_classes,
            d_s: 32,
            d_c: 16,
            encoder_arch: "small_cnn".into(),
            head_arch: "dense".into(),
            seed: 7,
        };
        (pc, ChannelConfig::default())
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let spec = SyntheticSpec { num_classes: 3, samples_per_class: 10, image_size: 8, seed: 1 };
        let split = make_synthetic(&spec).unwrap();
        let (mut pc, cc) = desk_config(3, 8);
        pc.encoder_arch = "small_cnn_tiny".into();
        let opts = TrainOptions { epochs: 0, ..Default::default() };
        let data = TaskData::Classification(split.train.clone());
        let (trained, history) = train_natural::<f32>(&data, &pc, &cc, &opts).unwrap();
        assert!(history.is_empty());
        let fresh = SemComPipeline::<f32>::build(&pc).unwrap();
        for (a, b) in trained.param_slices().iter().zip(fresh.param_slices().iter()) {
            assert_eq!(a, b);
        }
        // And a checkpoint of it still restores.
        let ckpt = crate::semcom::ModelCheckpoint::capture(&trained, Provenance::Natural, history);
        assert!(ckpt.restore().is_ok());
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let (pc, cc) = desk_config(3, 8);
        let data = TaskData::Classification(vec![]);
        assert!(train_natural::<f32>(&data, &pc, &cc, &TrainOptions::default()).is_err());
    }

    #[test]
    fn small_synthetic_task_learns() {
        let spec = SyntheticSpec { num_classes: 4, samples_per_class: 40, image_size: 12, seed: 2 };
        let split = make_synthetic(&spec).unwrap();
        let (pc, cc) = desk_config(4, 12);
        let opts = TrainOptions { epochs: 8, batch_size: 32, learning_rate: 3e-3, seed: 1 };
        let data = TaskData::Classification(split.train.clone());
        let (pipeline, history) = train_natural::<f32>(&data, &pc, &cc, &opts).unwrap();
        assert_eq!(history.len(), 8);
        assert!(
            history.windows(2).all(|w| w[0].epoch + 1 == w[1].epoch),
            "epochs must be logged monotonically"
        );
        let acc = classify_accuracy(&pipeline, &split.test, 10.0, 3).unwrap();
        assert!(acc >= 0.8, "synthetic 4-class accuracy {acc}");
    }

    #[test]
    fn plate_pipeline_learns_micro_task() {
        let split = make_synthetic_plates(200, 3, 4).unwrap();
        let pc = PipelineConfig {
            task: TaskKind::PlateRecognition,
            input_shape: (3, 24, 94),
            num_classes: crate::datasets::PLATE_ALPHABET.len(),
            d_s: 0,
            d_c: 48,
            encoder_arch: "lprnet_tiny".into(),
            head_arch: "greedy_seq".into(),
            seed: 11,
        };
        let cc = ChannelConfig::default();
        let opts = TrainOptions { epochs: 40, batch_size: 16, learning_rate: 5e-3, seed: 2 };
        let data = TaskData::Plates(split.train.clone());
        let (pipeline, history) = train_natural::<f32>(&data, &pc, &cc, &opts).unwrap();
        assert!(
            history.last().unwrap().loss < history.first().unwrap().loss,
            "sequence loss should fall: {:?}",
            history
        );
        let acc = plate_accuracy(&pipeline, &split.test, 10.0, 5).unwrap();
        assert!(acc >= 0.5, "micro plate exact-match accuracy {acc}");
    }
}
