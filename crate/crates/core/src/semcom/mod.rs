//! The task-oriented semantic communication pipeline.
//!
//! Forward path: semantic encoder -> channel encoder -> power normalization
//! -> AWGN channel -> channel decoder -> task head. Training samples the
//! channel SNR uniformly per batch so the system adapts to a range of
//! conditions; evaluation fixes channel seeds so sweeps are reproducible.

mod channel;
mod checkpoint;
mod metrics;
mod pipeline;
pub(crate) mod train;

pub use channel::{
    awgn_channel, power_normalize, power_normalize_rows, sample_training_snr, ChannelSymbols,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, EpochRecord, ModelCheckpoint, Provenance};
pub use metrics::{classify_accuracy, plate_accuracy, plate_greedy_decode, predict_labels};
pub use pipeline::{semcom_forward, ChannelMode, PipelineCache, SemComPipeline, TaskGrad, TaskOutput};
pub use train::{train_natural, BatchTarget, TrainOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SemComError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("power normalization of an all-zero vector")]
    ZeroPower,
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("metric over an empty sample list")]
    EmptyMetric,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

/// Which pragmatic task the receiver completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    PlateRecognition,
}

/// Channel configuration: training SNR range and evaluation grid (all dB).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub eval_snr_grid: Vec<f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            snr_db_min: 5.0,
            snr_db_max: 10.0,
            eval_snr_grid: (0..=10).map(|i| (i * 2) as f64).collect(),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), SemComError> {
        if self.snr_db_min > self.snr_db_max {
            return Err(SemComError::Config(format!(
                "snr_db_min {} > snr_db_max {}",
                self.snr_db_min, self.snr_db_max
            )));
        }
        if self.eval_snr_grid.is_empty() {
            return Err(SemComError::Config("eval_snr_grid is empty".into()));
        }
        if self.eval_snr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SemComError::Config(
                "eval_snr_grid must be strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Static description of a pipeline; everything needed to rebuild it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: TaskKind,
    /// Input image shape `(channels, height, width)`.
    pub input_shape: (usize, usize, usize),
    /// Classes (classification) or alphabet size including blank (plates).
    pub num_classes: usize,
    /// Semantic vector width. For plates, 0 means "derived from the encoder's
    /// flattened feature map".
    pub d_s: usize,
    /// Channel symbol count.
    pub d_c: usize,
    pub encoder_arch: String,
    pub head_arch: String,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), SemComError> {
        if self.d_c == 0 {
            return Err(SemComError::Config("d_c must be positive".into()));
        }
        if self.task == TaskKind::Classification && self.d_s == 0 {
            return Err(SemComError::Config("d_s must be positive for classification".into()));
        }
        if self.num_classes < 2 {
            return Err(SemComError::Config("need at least two output symbols".into()));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h < 4 || w < 4 {
            return Err(SemComError::Config(format!(
                "implausible input shape ({c},{h},{w})"
            )));
        }
        Ok(())
    }
}
