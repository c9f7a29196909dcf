//! Dataset ingestion, preprocessing, and deterministic splits.
//!
//! Three sources: GTSRB class-folder archives, CCPD images with
//! filename-encoded annotations, and a fully procedural synthetic dataset so
//! the whole experiment chain runs without downloads.

mod ccpd;
mod container;
mod gtsrb;
mod manifest;
mod synthetic;

pub use ccpd::{
    crop_and_resize_plate, encode_ccpd_char_field, load_ccpd, parse_ccpd_annotation,
    plate_string, CcpdAnnotation, PLATE_ALPHABET, PLATE_HEIGHT, PLATE_WIDTH,
};
pub use container::{load_container, save_container, TaskData};
pub use gtsrb::{load_gtsrb, GTSRB_IMAGE_SIZE, GTSRB_NUM_CLASSES};
pub use manifest::{samples_digest, DatasetManifest};
pub use synthetic::{make_synthetic, make_synthetic_plates, SyntheticSpec};

use crate::digest::ContentDigest;
use crate::rng::rng_for;
use crate::Image;
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("ingestion failed: {0}")]
    Ingestion(String),
    #[error("annotation parse error in {field}: {reason}")]
    Parse { field: String, reason: String },
    #[error("preprocessing failed: {0}")]
    Preprocessing(String),
    #[error("invalid dataset spec: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// An image with a class label; pixels are `(3, h, w)` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub pixels: Image,
    pub label: usize,
}

/// A cropped license plate with its character sequence.
///
/// `chars` are indices into [`PLATE_ALPHABET`] (never the blank at 0).
#[derive(Debug, Clone)]
pub struct PlateSample {
    pub pixels: Image,
    pub chars: Vec<usize>,
}

/// A sample that can be hashed into a split digest.
pub trait Sample {
    fn pixels(&self) -> &Image;
    fn digest_into(&self, d: &mut ContentDigest);
}

impl Sample for LabeledImage {
    fn pixels(&self) -> &Image {
        &self.pixels
    }
    fn digest_into(&self, d: &mut ContentDigest) {
        d.update_u64(self.label as u64);
        d.update_f32s(self.pixels.as_slice().expect("contiguous pixels"));
    }
}

impl Sample for PlateSample {
    fn pixels(&self) -> &Image {
        &self.pixels
    }
    fn digest_into(&self, d: &mut ContentDigest) {
        d.update_u64(self.chars.len() as u64);
        for &c in &self.chars {
            d.update_u64(c as u64);
        }
        d.update_f32s(self.pixels.as_slice().expect("contiguous pixels"));
    }
}

/// Disjoint train/test partition, a pure function of `(source, seed)`.
#[derive(Debug, Clone)]
pub struct DatasetSplit<S> {
    pub train: Vec<S>,
    pub test: Vec<S>,
    pub seed: u64,
}

impl<S: Sample> DatasetSplit<S> {
    /// Content digest over both partitions in order.
    pub fn digest(&self) -> String {
        let mut d = ContentDigest::new();
        d.update_u64(self.seed);
        d.update_u64(self.train.len() as u64);
        for s in &self.train {
            s.digest_into(&mut d);
        }
        d.update_u64(self.test.len() as u64);
        for s in &self.test {
            s.digest_into(&mut d);
        }
        d.finish()
    }

    /// Checks that every pixel of every sample lies in `[0, 1]`.
    pub fn pixels_in_unit_range(&self) -> bool {
        self.train
            .iter()
            .chain(self.test.iter())
            .all(|s| s.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)))
    }
}

/// Deterministic shuffle-and-cut split; `|train| = round(fraction * n)`.
pub fn split_dataset<S>(
    samples: Vec<S>,
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<S>, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::Validation(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = samples.len();
    let n_train = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[0x5b17]);
    order.shuffle(&mut rng);
    let mut slots: Vec<Option<S>> = samples.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (rank, &idx) in order.iter().enumerate() {
        let s = slots[idx].take().expect("each index visited once");
        if rank < n_train {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    Ok(DatasetSplit { train, test, seed })
}
