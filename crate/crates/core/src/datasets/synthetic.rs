//! Procedurally rendered desk-scale datasets.
//!
//! Ten canonical glyph shapes (cycled with distinct palettes beyond ten
//! classes), drawn with per-sample position/scale/color jitter and pixel
//! noise. Identical spec -> byte-identical dataset: every sample draws from
//! its own `(seed, class, index)` RNG stream.

use super::{split_dataset, DatasetError, DatasetSplit, LabeledImage, PlateSample};
use crate::rng::{rng_for, standard_normal, uniform};
use crate::Image;
use ndarray::Array3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Parameters of the synthetic classification dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.num_classes < 2 {
            return Err(DatasetError::Validation(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.image_size < 8 {
            return Err(DatasetError::Validation(format!(
                "image_size must be >= 8, got {}",
                self.image_size
            )));
        }
        if self.samples_per_class == 0 {
            return Err(DatasetError::Validation("samples_per_class must be > 0".into()));
        }
        Ok(())
    }
}

const TRAIN_FRACTION: f64 = 0.8;
const PIXEL_NOISE_STD: f64 = 0.03;

/// Renders the dataset and splits it 80/20.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit<LabeledImage>, DatasetError> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        let palette = class_palette(spec.seed, class);
        for idx in 0..spec.samples_per_class {
            let mut rng = rng_for(spec.seed, &[class as u64, idx as u64]);
            let pixels = render_glyph(spec.image_size, class, &palette, &mut rng);
            samples.push(LabeledImage { pixels, label: class });
        }
    }
    split_dataset(samples, TRAIN_FRACTION, spec.seed)
}

/// Foreground/background RGB for a class; kept well separated so every class
/// is learnable yet visually distinct across palette cycles.
fn class_palette(seed: u64, class: usize) -> ([f64; 3], [f64; 3]) {
    let mut rng = rng_for(seed, &[class as u64, 0xC010]);
    let fg = [
        uniform(&mut rng, 0.6, 0.95),
        uniform(&mut rng, 0.6, 0.95),
        uniform(&mut rng, 0.6, 0.95),
    ];
    let bg = [
        uniform(&mut rng, 0.05, 0.35),
        uniform(&mut rng, 0.05, 0.35),
        uniform(&mut rng, 0.05, 0.35),
    ];
    (fg, bg)
}

/// Whether the normalized point `(u, v)` (both in `[-1, 1]`) is inside the
/// canonical glyph for the shape family.
fn inside_glyph(shape: usize, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    match shape % 10 {
        0 => r <= 0.62,
        1 => u.abs().max(v.abs()) <= 0.55,
        // Upward triangle.
        2 => v >= -0.55 && u.abs() <= (0.62 - v) * 0.55,
        3 => (0.34..=0.66).contains(&r),
        4 => (u.abs() <= 0.2 || v.abs() <= 0.2) && u.abs().max(v.abs()) <= 0.68,
        5 => v.abs() <= 0.26 && u.abs() <= 0.8,
        6 => u.abs() <= 0.26 && v.abs() <= 0.8,
        7 => (u - v).abs() <= 0.3,
        8 => {
            let iu = ((u + 1.0) * 2.0).floor() as i64;
            let iv = ((v + 1.0) * 2.0).floor() as i64;
            (iu + iv) % 2 == 0
        }
        9 => {
            let du = u - (u * 2.0).round() / 2.0;
            let dv = v - (v * 2.0).round() / 2.0;
            (du * du + dv * dv).sqrt() <= 0.17
        }
        _ => unreachable!(),
    }
}

fn render_glyph(
    size: usize,
    class: usize,
    palette: &([f64; 3], [f64; 3]),
    rng: &mut ChaCha8Rng,
) -> Image {
    let (fg, bg) = palette;
    let cx = uniform(rng, -0.15, 0.15);
    let cy = uniform(rng, -0.15, 0.15);
    let scale = uniform(rng, 0.85, 1.15);
    let jitter: Vec<f64> = (0..6).map(|_| uniform(rng, -0.08, 0.08)).collect();

    let mut img = Array3::<f32>::zeros((3, size, size));
    let half = (size as f64 - 1.0) / 2.0;
    for y in 0..size {
        for x in 0..size {
            let u = ((x as f64 - half) / half - cx) / scale;
            let v = ((y as f64 - half) / half - cy) / scale;
            let inside = inside_glyph(class, u, v);
            for ch in 0..3 {
                let base = if inside { fg[ch] + jitter[ch] } else { bg[ch] + jitter[3 + ch] };
                img[[ch, y, x]] = base as f32;
            }
        }
    }
    for v in img.iter_mut() {
        let noisy = *v as f64 + standard_normal::<f64>(rng) * PIXEL_NOISE_STD;
        *v = noisy.clamp(0.0, 1.0) as f32;
    }
    img
}

/// Deterministic micro plate dataset: `seq_len` digit glyphs drawn in fixed
/// slots on a plate-shaped canvas. A stand-in for CCPD so the sequence
/// pipeline can be trained and tested offline.
pub fn make_synthetic_plates(
    num_plates: usize,
    seq_len: usize,
    seed: u64,
) -> Result<DatasetSplit<PlateSample>, DatasetError> {
    use super::ccpd::{digit_alphabet_id, PLATE_HEIGHT, PLATE_WIDTH};
    if num_plates < 2 || seq_len == 0 {
        return Err(DatasetError::Validation(
            "need at least 2 plates and a non-empty sequence".into(),
        ));
    }
    let mut samples = Vec::with_capacity(num_plates);
    for idx in 0..num_plates {
        let mut rng = rng_for(seed, &[0x91a7e, idx as u64]);
        let digits: Vec<u8> = (0..seq_len)
            .map(|_| (uniform::<f64>(&mut rng, 0.0, 10.0).floor() as u8).min(9))
            .collect();
        let mut img = Array3::<f32>::from_elem((3, PLATE_HEIGHT, PLATE_WIDTH), 0.12);
        let slot_w = PLATE_WIDTH / seq_len;
        for (pos, &d) in digits.iter().enumerate() {
            draw_digit(&mut img, d, pos * slot_w, slot_w);
        }
        for v in img.iter_mut() {
            let noisy = *v as f64 + standard_normal::<f64>(&mut rng) * PIXEL_NOISE_STD;
            *v = noisy.clamp(0.0, 1.0) as f32;
        }
        let chars = digits.iter().map(|&d| digit_alphabet_id(d)).collect();
        samples.push(PlateSample { pixels: img, chars });
    }
    split_dataset(samples, TRAIN_FRACTION, seed)
}

/// Seven-segment style digit rendering into a horizontal slot.
fn draw_digit(img: &mut Image, digit: u8, x0: usize, slot_w: usize) {
    // Segments: top, top-left, top-right, middle, bottom-left, bottom-right, bottom.
    const SEGMENTS: [[bool; 7]; 10] = [
        [true, true, true, false, true, true, true],
        [false, false, true, false, false, true, false],
        [true, false, true, true, true, false, true],
        [true, false, true, true, false, true, true],
        [false, true, true, true, false, true, false],
        [true, true, false, true, false, true, true],
        [true, true, false, true, true, true, true],
        [true, false, true, false, false, true, false],
        [true, true, true, true, true, true, true],
        [true, true, true, true, false, true, true],
    ];
    let h = img.shape()[1];
    let margin = slot_w / 6 + 1;
    let x_left = x0 + margin;
    let x_right = (x0 + slot_w).saturating_sub(margin).max(x_left + 1);
    let y_top = 3;
    let y_bot = h - 4;
    let y_mid = h / 2;
    let segs = SEGMENTS[digit as usize];
    let mut fill = |ya: usize, yb: usize, xa: usize, xb: usize| {
        for y in ya..=yb.min(h - 1) {
            for x in xa..=xb.min(img.shape()[2] - 1) {
                for ch in 0..3 {
                    img[[ch, y, x]] = 0.9;
                }
            }
        }
    };
    if segs[0] {
        fill(y_top, y_top + 2, x_left, x_right);
    }
    if segs[1] {
        fill(y_top, y_mid, x_left, x_left + 2);
    }
    if segs[2] {
        fill(y_top, y_mid, x_right.saturating_sub(2), x_right);
    }
    if segs[3] {
        fill(y_mid - 1, y_mid + 1, x_left, x_right);
    }
    if segs[4] {
        fill(y_mid, y_bot, x_left, x_left + 2);
    }
    if segs[5] {
        fill(y_mid, y_bot, x_right.saturating_sub(2), x_right);
    }
    if segs[6] {
        fill(y_bot - 2, y_bot, x_left, x_right);
    }
}
