//! CCPD ingestion: filename-encoded annotations and plate crops.
//!
//! CCPD encodes its annotation in the image filename, fields separated by
//! `-`: area, tilt, bounding box, the four plate vertices, the character
//! indices, brightness, and blurriness. The vertex field holds four `x&y`
//! points (clockwise from bottom-right); the character field holds indices
//! into three position-specific tables (province glyph, letter, then
//! letters-or-digits).

use super::{split_dataset, DatasetError, DatasetSplit, PlateSample};
use crate::Image;
use log::warn;
use ndarray::Array3;
use std::path::Path;

/// Plate crop height used by the sequence pipeline.
pub const PLATE_HEIGHT: usize = 24;
/// Plate crop width used by the sequence pipeline.
pub const PLATE_WIDTH: usize = 94;

/// Province glyphs as indexed by the CCPD character field (first position).
/// The trailing "O" entry is a no-character placeholder, not a real glyph.
const PROVINCES: [&str; 34] = [
    "皖", "沪", "津", "渝", "冀", "晋", "蒙", "辽", "吉", "黑", "苏", "浙", "京", "闽", "赣",
    "鲁", "豫", "鄂", "湘", "粤", "桂", "琼", "川", "贵", "云", "藏", "陕", "甘", "青", "宁",
    "新", "警", "学", "O",
];

/// Letters as indexed by the second position (I and O excluded from plates;
/// the trailing "O" is the placeholder).
const LETTERS: [&str; 25] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "J", "K", "L", "M", "N", "P", "Q", "R", "S", "T",
    "U", "V", "W", "X", "Y", "Z", "O",
];

/// Letters-or-digits as indexed by positions three onward.
const ADS: [&str; 35] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "J", "K", "L", "M", "N", "P", "Q", "R", "S", "T",
    "U", "V", "W", "X", "Y", "Z", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "O",
];

const NUM_PROVINCE_GLYPHS: usize = 33; // excludes the placeholder
const NUM_LETTERS: usize = 24;
const NUM_DIGITS: usize = 10;

/// Decoder alphabet: blank, province glyphs, letters, digits.
///
/// Index 0 is the blank used by the greedy decoder and the sequence loss;
/// plate character sequences never contain it.
pub static PLATE_ALPHABET: std::sync::LazyLock<Vec<&'static str>> =
    std::sync::LazyLock::new(|| {
        let mut v = Vec::with_capacity(1 + NUM_PROVINCE_GLYPHS + NUM_LETTERS + NUM_DIGITS);
        v.push("-");
        v.extend_from_slice(&PROVINCES[..NUM_PROVINCE_GLYPHS]);
        v.extend_from_slice(&LETTERS[..NUM_LETTERS]);
        for d in ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"] {
            v.push(d);
        }
        v
    });

/// Alphabet id of a province-table index.
fn province_alphabet_id(idx: usize) -> usize {
    1 + idx
}

/// Alphabet id of a letter-table index.
fn letter_alphabet_id(idx: usize) -> usize {
    1 + NUM_PROVINCE_GLYPHS + idx
}

/// Alphabet id of a digit 0-9.
pub(crate) fn digit_alphabet_id(digit: u8) -> usize {
    1 + NUM_PROVINCE_GLYPHS + NUM_LETTERS + digit as usize
}

/// Renders a character-id sequence as a readable plate string.
pub fn plate_string(chars: &[usize]) -> String {
    chars.iter().map(|&c| PLATE_ALPHABET[c]).collect()
}

/// Parsed CCPD filename annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct CcpdAnnotation {
    /// Four plate corners in pixel coordinates, clockwise from bottom-right.
    pub plate_quad: [(f64, f64); 4],
    /// Character sequence as [`PLATE_ALPHABET`] indices.
    pub chars: Vec<usize>,
}

fn parse_err(field: &str, reason: impl Into<String>) -> DatasetError {
    DatasetError::Parse { field: field.to_string(), reason: reason.into() }
}

/// Parses the CCPD filename convention into the plate quad and character ids.
pub fn parse_ccpd_annotation(filename: &str) -> Result<CcpdAnnotation, DatasetError> {
    let stem = Path::new(filename)
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| parse_err("filename", "not valid UTF-8"))?;
    let fields: Vec<&str> = stem.split('-').collect();
    if fields.len() < 5 {
        return Err(parse_err(
            "filename",
            format!("expected at least 5 '-'-separated fields, got {}", fields.len()),
        ));
    }

    let vertex_parts: Vec<&str> = fields[3].split('_').collect();
    if vertex_parts.len() != 4 {
        return Err(parse_err(
            "vertices",
            format!("expected 4 points, got {}", vertex_parts.len()),
        ));
    }
    let mut plate_quad = [(0.0, 0.0); 4];
    for (i, part) in vertex_parts.iter().enumerate() {
        let (x, y) = part
            .split_once('&')
            .ok_or_else(|| parse_err("vertices", format!("point {i} missing '&'")))?;
        let x: f64 = x
            .parse()
            .map_err(|_| parse_err("vertices", format!("point {i} x not numeric: {x}")))?;
        let y: f64 = y
            .parse()
            .map_err(|_| parse_err("vertices", format!("point {i} y not numeric: {y}")))?;
        plate_quad[i] = (x, y);
    }

    let idx_parts: Vec<&str> = fields[4].split('_').collect();
    if idx_parts.is_empty() {
        return Err(parse_err("characters", "empty character field"));
    }
    let mut chars = Vec::with_capacity(idx_parts.len());
    for (pos, part) in idx_parts.iter().enumerate() {
        let idx: usize = part
            .parse()
            .map_err(|_| parse_err("characters", format!("position {pos} not numeric: {part}")))?;
        let id = match pos {
            0 => {
                if idx >= PROVINCES.len() {
                    return Err(parse_err("characters", format!("province index {idx} out of range")));
                }
                if idx >= NUM_PROVINCE_GLYPHS {
                    return Err(parse_err("characters", format!("province index {idx} is the placeholder")));
                }
                province_alphabet_id(idx)
            }
            1 => {
                if idx >= LETTERS.len() {
                    return Err(parse_err("characters", format!("letter index {idx} out of range")));
                }
                if idx >= NUM_LETTERS {
                    return Err(parse_err("characters", format!("letter index {idx} is the placeholder")));
                }
                letter_alphabet_id(idx)
            }
            _ => {
                if idx >= ADS.len() {
                    return Err(parse_err("characters", format!("character index {idx} out of range")));
                }
                if idx >= NUM_LETTERS + NUM_DIGITS {
                    return Err(parse_err("characters", format!("character index {idx} is the placeholder")));
                }
                if idx < NUM_LETTERS {
                    letter_alphabet_id(idx)
                } else {
                    digit_alphabet_id((idx - NUM_LETTERS) as u8)
                }
            }
        };
        chars.push(id);
    }
    Ok(CcpdAnnotation { plate_quad, chars })
}

/// Re-encodes a parsed character sequence back into the filename field
/// (underscore-joined indices). Inverse of the character part of
/// [`parse_ccpd_annotation`].
pub fn encode_ccpd_char_field(chars: &[usize]) -> Result<String, DatasetError> {
    let mut parts = Vec::with_capacity(chars.len());
    for (pos, &id) in chars.iter().enumerate() {
        let idx = match pos {
            0 => {
                if !(1..=NUM_PROVINCE_GLYPHS).contains(&id) {
                    return Err(parse_err("characters", format!("id {id} is not a province glyph")));
                }
                id - 1
            }
            1 => {
                let base = 1 + NUM_PROVINCE_GLYPHS;
                if !(base..base + NUM_LETTERS).contains(&id) {
                    return Err(parse_err("characters", format!("id {id} is not a letter")));
                }
                id - base
            }
            _ => {
                let letter_base = 1 + NUM_PROVINCE_GLYPHS;
                let digit_base = letter_base + NUM_LETTERS;
                if (letter_base..digit_base).contains(&id) {
                    id - letter_base
                } else if (digit_base..digit_base + NUM_DIGITS).contains(&id) {
                    NUM_LETTERS + (id - digit_base)
                } else {
                    return Err(parse_err("characters", format!("id {id} is not a letter or digit")));
                }
            }
        };
        parts.push(idx.to_string());
    }
    Ok(parts.join("_"))
}

/// Crops the axis-aligned bounding box of `quad` out of `image` and
/// bilinearly resizes it to the plate shape, `(3, 24, 94)` in `[0, 1]`.
pub fn crop_and_resize_plate(
    image: &Image,
    quad: &[(f64, f64); 4],
) -> Result<Image, DatasetError> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if c != 3 {
        return Err(DatasetError::Preprocessing(format!("expected 3 channels, got {c}")));
    }
    let xs: Vec<f64> = quad.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = quad.iter().map(|p| p.1).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min).clamp(0.0, w as f64 - 1.0);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, w as f64 - 1.0);
    let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min).clamp(0.0, h as f64 - 1.0);
    let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).clamp(0.0, h as f64 - 1.0);
    if x_max - x_min < 1.0 || y_max - y_min < 1.0 {
        return Err(DatasetError::Preprocessing(format!(
            "degenerate plate quad: bbox {x_min},{y_min} .. {x_max},{y_max}"
        )));
    }

    let mut out = Array3::<f32>::zeros((3, PLATE_HEIGHT, PLATE_WIDTH));
    for oy in 0..PLATE_HEIGHT {
        for ox in 0..PLATE_WIDTH {
            let sx = x_min + (x_max - x_min) * ox as f64 / (PLATE_WIDTH - 1) as f64;
            let sy = y_min + (y_max - y_min) * oy as f64 / (PLATE_HEIGHT - 1) as f64;
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = (sx - x0 as f64) as f32;
            let fy = (sy - y0 as f64) as f32;
            for ch in 0..3 {
                let v00 = image[[ch, y0, x0]];
                let v01 = image[[ch, y0, x1]];
                let v10 = image[[ch, y1, x0]];
                let v11 = image[[ch, y1, x1]];
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out[[ch, oy, ox]] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Loads a directory of CCPD-named images, cropping every plate.
///
/// Files whose names do not parse or whose pixels cannot be decoded are
/// skipped with a counted warning. Uses `splits/train.txt` and
/// `splits/test.txt` (or `val.txt`) when present; otherwise a seeded
/// 80/20 split.
pub fn load_ccpd(root: &Path, seed: u64) -> Result<DatasetSplit<PlateSample>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::Ingestion(format!("{} is not a directory", root.display())));
    }
    let split_lists = read_split_lists(root);

    let mut files: Vec<std::path::PathBuf> = Vec::new();
    collect_images(root, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(DatasetError::Ingestion(format!(
            "no images found under {}",
            root.display()
        )));
    }

    let mut skipped = 0usize;
    let load_one = |path: &std::path::Path| -> Option<PlateSample> {
        let name = path.file_name()?.to_str()?;
        let ann = match parse_ccpd_annotation(name) {
            Ok(a) => a,
            Err(e) => {
                warn!("skipping {name}: {e}");
                return None;
            }
        };
        let raw = match super::gtsrb::load_image_chw(path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {name}: {e}");
                return None;
            }
        };
        match crop_and_resize_plate(&raw, &ann.plate_quad) {
            Ok(pixels) => Some(PlateSample { pixels, chars: ann.chars }),
            Err(e) => {
                warn!("skipping {name}: {e}");
                None
            }
        }
    };

    if let Some((train_names, test_names)) = split_lists {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for path in &files {
            let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
            let base = path.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
            let bucket = if train_names.contains(&rel) || train_names.contains(&base) {
                Some(true)
            } else if test_names.contains(&rel) || test_names.contains(&base) {
                Some(false)
            } else {
                None
            };
            if let Some(is_train) = bucket {
                match load_one(path) {
                    Some(s) if is_train => train.push(s),
                    Some(s) => test.push(s),
                    None => skipped += 1,
                }
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(DatasetError::Ingestion("split lists matched no decodable images".into()));
        }
        if skipped > 0 {
            warn!("ccpd: skipped {skipped} files");
        }
        return Ok(DatasetSplit { train, test, seed });
    }

    let mut samples = Vec::with_capacity(files.len());
    for path in &files {
        match load_one(path) {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    if samples.is_empty() {
        return Err(DatasetError::Ingestion("no decodable CCPD images".into()));
    }
    if skipped > 0 {
        warn!("ccpd: skipped {skipped} files");
    }
    split_dataset(samples, 0.8, seed)
}

fn read_split_lists(
    root: &Path,
) -> Option<(std::collections::HashSet<String>, std::collections::HashSet<String>)> {
    let splits = root.join("splits");
    let read = |name: &str| -> Option<std::collections::HashSet<String>> {
        let content = std::fs::read_to_string(splits.join(name)).ok()?;
        Some(content.lines().map(|l| l.trim().replace('\\', "/")).filter(|l| !l.is_empty()).collect())
    };
    let train = read("train.txt")?;
    let test = read("test.txt").or_else(|| read("val.txt"))?;
    Some((train, test))
}

fn collect_images(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<(), DatasetError> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            if path.file_name().map(|n| n != "splits").unwrap_or(true) {
                collect_images(&path, out)?;
            }
        } else if let Some(ext) = path.extension().and_then(|e| e.to_str()) {
            if matches!(ext.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png" | "bmp" | "ppm") {
                out.push(path);
            }
        }
    }
    Ok(())
}
