//! Self-describing checkpoint container: config + weights + history.
//!
//! Weights are stored as base64 little-endian `f32`, so a reload reproduces
//! bit-identical forward outputs.

use super::pipeline::SemComPipeline;
use super::{PipelineConfig, SemComError};
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// How the checkpointed model was trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Natural,
    Sdm,
    RandomDefense,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Natural => "natural",
            Provenance::Sdm => "sdm",
            Provenance::RandomDefense => "random_defense",
        })
    }
}

/// One line of training history.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Serialized model: enough to rebuild the pipeline exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub pipeline_config: PipelineConfig,
    pub provenance: Provenance,
    pub training_history: Vec<EpochRecord>,
    /// Base64 little-endian f32 blob per parameter tensor, in
    /// `param_slices` order.
    pub weights: Vec<String>,
    /// Provenance metadata (config digest, global seed, ...), filled by the
    /// experiment driver.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl ModelCheckpoint {
    /// Captures the current weights of a pipeline.
    pub fn capture(
        pipeline: &SemComPipeline<f32>,
        provenance: Provenance,
        training_history: Vec<EpochRecord>,
    ) -> Self {
        let engine = base64::engine::general_purpose::STANDARD;
        let weights = pipeline
            .param_slices()
            .iter()
            .map(|s| {
                let mut bytes = Vec::with_capacity(s.len() * 4);
                for v in s.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                engine.encode(bytes)
            })
            .collect();
        Self {
            pipeline_config: pipeline.config.clone(),
            provenance,
            training_history,
            weights,
            meta: BTreeMap::new(),
        }
    }

    /// Rebuilds the pipeline and restores its weights.
    pub fn restore(&self) -> Result<SemComPipeline<f32>, SemComError> {
        let mut pipeline = SemComPipeline::<f32>::build(&self.pipeline_config)?;
        let engine = base64::engine::general_purpose::STANDARD;
        let slices = pipeline.param_slices_mut();
        if slices.len() != self.weights.len() {
            return Err(SemComError::Checkpoint(format!(
                "checkpoint has {} tensors, pipeline needs {}",
                self.weights.len(),
                slices.len()
            )));
        }
        for (slice, blob) in slices.into_iter().zip(self.weights.iter()) {
            let bytes = engine
                .decode(blob)
                .map_err(|e| SemComError::Checkpoint(format!("bad weight blob: {e}")))?;
            if bytes.len() != slice.len() * 4 {
                return Err(SemComError::Checkpoint(format!(
                    "weight blob holds {} bytes, tensor needs {}",
                    bytes.len(),
                    slice.len() * 4
                )));
            }
            for (dst, chunk) in slice.iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
        }
        Ok(pipeline)
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<(), SemComError> {
    let json = serde_json::to_string(ckpt)
        .map_err(|e| SemComError::Checkpoint(format!("serialize: {e}")))?;
    std::fs::write(path, json).map_err(|e| SemComError::Checkpoint(format!("write: {e}")))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, SemComError> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| SemComError::Checkpoint(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&json).map_err(|e| SemComError::Checkpoint(format!("parse: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semcom::{ChannelMode, TaskKind};
    use crate::rng::rng_from_seed;
    use ndarray::Array4;

    #[test]
    fn reload_reproduces_identical_outputs() {
        let cfg = PipelineConfig {
            task: TaskKind::Classification,
            input_shape: (3, 8, 8),
            num_classes: 3,
            d_s: 8,
            d_c: 6,
            encoder_arch: "small_cnn_tiny".into(),
            head_arch: "dense".into(),
            seed: 5,
        };
        let mut pipeline = SemComPipeline::<f32>::build(&cfg).unwrap();
        // Perturb away from the seeded init so restore() has real work to do.
        for s in pipeline.param_slices_mut() {
            for v in s.iter_mut() {
                *v += 0.125;
            }
        }
        let ckpt = ModelCheckpoint::capture(&pipeline, Provenance::Natural, vec![]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&ckpt, &path).unwrap();
        let restored = load_checkpoint(&path).unwrap().restore().unwrap();

        let probe = Array4::from_shape_fn((3, 3, 8, 8), |(b, c, h, w)| {
            ((b * 13 + c * 5 + h * 3 + w) % 17) as f32 / 17.0
        });
        let mut r1 = rng_from_seed(8);
        let mut r2 = rng_from_seed(8);
        let y1 = pipeline
            .forward(&probe, ChannelMode::Awgn { snr_db: 6.0 }, &mut r1)
            .unwrap()
            .expect_class();
        let y2 = restored
            .forward(&probe, ChannelMode::Awgn { snr_db: 6.0 }, &mut r2)
            .unwrap()
            .expect_class();
        assert_eq!(y1, y2);
    }

    #[test]
    fn corrupted_checkpoint_is_rejected() {
        let cfg = PipelineConfig {
            task: TaskKind::Classification,
            input_shape: (3, 8, 8),
            num_classes: 3,
            d_s: 8,
            d_c: 6,
            encoder_arch: "small_cnn_tiny".into(),
            head_arch: "dense".into(),
            seed: 5,
        };
        let pipeline = SemComPipeline::<f32>::build(&cfg).unwrap();
        let mut ckpt = ModelCheckpoint::capture(&pipeline, Provenance::Sdm, vec![]);
        ckpt.weights.pop();
        assert!(ckpt.restore().is_err());
    }
}
