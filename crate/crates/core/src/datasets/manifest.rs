//! Dataset manifests: counts, preprocessing parameters, content digest.

use super::{DatasetSplit, LabeledImage, PlateSample, Sample};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// JSON manifest emitted next to every materialized split.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    /// "classification" or "plates".
    pub kind: String,
    pub n_train: usize,
    pub n_test: usize,
    /// Per-class (or per-sequence-length) sample counts, key = class id.
    pub counts_per_class: BTreeMap<String, usize>,
    /// Free-form preprocessing parameters (resize target, source, ...).
    pub preprocessing: BTreeMap<String, String>,
    /// SHA-256 over all sample content in split order.
    pub content_digest: String,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn for_classification(
        split: &DatasetSplit<LabeledImage>,
        preprocessing: BTreeMap<String, String>,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in split.train.iter().chain(split.test.iter()) {
            *counts.entry(s.label.to_string()).or_default() += 1;
        }
        Self {
            kind: "classification".to_string(),
            n_train: split.train.len(),
            n_test: split.test.len(),
            counts_per_class: counts,
            preprocessing,
            content_digest: split.digest(),
            seed: split.seed,
        }
    }

    pub fn for_plates(
        split: &DatasetSplit<PlateSample>,
        preprocessing: BTreeMap<String, String>,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in split.train.iter().chain(split.test.iter()) {
            *counts.entry(format!("len{}", s.chars.len())).or_default() += 1;
        }
        Self {
            kind: "plates".to_string(),
            n_train: split.train.len(),
            n_test: split.test.len(),
            counts_per_class: counts,
            preprocessing,
            content_digest: split.digest(),
            seed: split.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Digest of a plain sample list (used for adversarial batches, which are
/// not train/test splits).
pub fn samples_digest<S: Sample>(samples: &[S]) -> String {
    let mut d = crate::digest::ContentDigest::new();
    d.update_u64(samples.len() as u64);
    for s in samples {
        s.digest_into(&mut d);
    }
    d.finish()
}
