//! GTSRB ingestion: class-indexed folders with per-class annotation CSVs.

use super::{split_dataset, DatasetError, DatasetSplit, LabeledImage};
use crate::Image;
use image::imageops::FilterType;
use log::{info, warn};
use ndarray::Array3;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Number of traffic-sign classes.
pub const GTSRB_NUM_CLASSES: usize = 43;
/// Side length every sign image is resized to.
pub const GTSRB_IMAGE_SIZE: usize = 32;

/// Loads any `image`-supported file into `(3, h, w)` RGB in `[0, 1]`.
pub(crate) fn load_image_chw(path: &Path) -> Result<Image, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::Ingestion(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<f32>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

fn to_chw_resized(img: image::RgbImage) -> Image {
    let resized = image::imageops::resize(
        &img,
        GTSRB_IMAGE_SIZE as u32,
        GTSRB_IMAGE_SIZE as u32,
        FilterType::Triangle,
    );
    let mut out = Array3::<f32>::zeros((3, GTSRB_IMAGE_SIZE, GTSRB_IMAGE_SIZE));
    for (x, y, px) in resized.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c] as f32 / 255.0;
        }
    }
    out
}

struct Annotation {
    filename: String,
    roi: Option<(u32, u32, u32, u32)>,
}

/// Parses a GT-*.csv per-class annotation file (semicolon separated:
/// `Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId`).
fn parse_annotation_csv(path: &Path) -> Result<Vec<Annotation>, DatasetError> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        if fields.is_empty() || fields[0].is_empty() {
            continue;
        }
        let roi = if fields.len() >= 7 {
            let parse = |s: &str| s.trim().parse::<u32>().ok();
            match (parse(fields[3]), parse(fields[4]), parse(fields[5]), parse(fields[6])) {
                (Some(x1), Some(y1), Some(x2), Some(y2)) if x2 > x1 && y2 > y1 => {
                    Some((x1, y1, x2, y2))
                }
                _ => None,
            }
        } else {
            None
        };
        out.push(Annotation { filename: fields[0].to_string(), roi });
    }
    Ok(out)
}

fn load_sign(path: &Path, roi: Option<(u32, u32, u32, u32)>) -> Result<Image, DatasetError> {
    let img = image::open(path)
        .map_err(|e| DatasetError::Ingestion(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let img = match roi {
        Some((x1, y1, x2, y2)) if x2 <= img.width() && y2 <= img.height() => {
            image::imageops::crop_imm(&img, x1, y1, x2 - x1, y2 - y1).to_image()
        }
        _ => img,
    };
    Ok(to_chw_resized(img))
}

/// Finds the directory that holds the class-indexed subfolders.
fn find_class_root(root: &Path) -> Option<PathBuf> {
    let candidates = [
        root.to_path_buf(),
        root.join("Final_Training").join("Images"),
        root.join("GTSRB").join("Final_Training").join("Images"),
        root.join("Training"),
        root.join("train"),
    ];
    candidates.into_iter().find(|c| {
        c.is_dir()
            && std::fs::read_dir(c)
                .map(|rd| {
                    rd.flatten().any(|e| {
                        e.path().is_dir()
                            && e.file_name().to_string_lossy().parse::<usize>().is_ok()
                    })
                })
                .unwrap_or(false)
    })
}

fn load_class_folders(
    class_root: &Path,
    skipped: &mut usize,
) -> Result<Vec<LabeledImage>, DatasetError> {
    let mut class_dirs: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(class_root)? {
        let entry = entry?;
        if entry.path().is_dir() {
            if let Ok(label) = entry.file_name().to_string_lossy().parse::<usize>() {
                class_dirs.push((label, entry.path()));
            }
        }
    }
    class_dirs.sort();

    let mut samples = Vec::new();
    for (label, dir) in &class_dirs {
        let csv = std::fs::read_dir(dir)?
            .flatten()
            .map(|e| e.path())
            .find(|p| p.extension().map(|e| e == "csv").unwrap_or(false));
        let annotations: Vec<Annotation> = match csv {
            Some(csv_path) => parse_annotation_csv(&csv_path)?,
            None => {
                let mut names: Vec<String> = std::fs::read_dir(dir)?
                    .flatten()
                    .map(|e| e.file_name().to_string_lossy().to_string())
                    .filter(|n| !n.ends_with(".csv"))
                    .collect();
                names.sort();
                names.into_iter().map(|filename| Annotation { filename, roi: None }).collect()
            }
        };
        for ann in annotations {
            let path = dir.join(&ann.filename);
            match load_sign(&path, ann.roi) {
                Ok(pixels) => samples.push(LabeledImage { pixels, label: *label }),
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    *skipped += 1;
                }
            }
        }
    }
    Ok(samples)
}

/// Loads the official test set (`Final_Test/Images` plus a ClassId CSV), if
/// the archive ships one.
fn load_official_test(root: &Path, skipped: &mut usize) -> Option<Vec<LabeledImage>> {
    let test_dir = [
        root.join("Final_Test").join("Images"),
        root.join("GTSRB").join("Final_Test").join("Images"),
    ]
    .into_iter()
    .find(|d| d.is_dir())?;
    let csv = std::fs::read_dir(root)
        .ok()?
        .flatten()
        .map(|e| e.path())
        .chain(std::fs::read_dir(&test_dir).ok()?.flatten().map(|e| e.path()))
        .find(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().to_lowercase().contains("final_test"))
                .unwrap_or(false)
                && p.extension().map(|e| e == "csv").unwrap_or(false)
        })?;
    let content = std::fs::read_to_string(csv).ok()?;
    let mut samples = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        if fields.len() < 8 {
            continue;
        }
        let label: usize = fields[7].trim().parse().ok()?;
        let roi = {
            let parse = |s: &str| s.trim().parse::<u32>().ok();
            match (parse(fields[3]), parse(fields[4]), parse(fields[5]), parse(fields[6])) {
                (Some(x1), Some(y1), Some(x2), Some(y2)) if x2 > x1 && y2 > y1 => {
                    Some((x1, y1, x2, y2))
                }
                _ => None,
            }
        };
        let path = test_dir.join(fields[0]);
        match load_sign(&path, roi) {
            Ok(pixels) => samples.push(LabeledImage { pixels, label }),
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                *skipped += 1;
            }
        }
    }
    if samples.is_empty() {
        None
    } else {
        Some(samples)
    }
}

/// Ingests a GTSRB archive: every image ROI-cropped (when annotated),
/// resized to 32x32, scaled to `[0, 1]`.
///
/// Uses the official train/test partition when the archive ships one,
/// otherwise a seeded 80/20 split. Unreadable files are skipped with a
/// counted warning.
pub fn load_gtsrb(root: &Path, seed: u64) -> Result<DatasetSplit<LabeledImage>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::Ingestion(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let class_root = find_class_root(root).ok_or_else(|| {
        DatasetError::Ingestion(format!(
            "no class-indexed subfolders found under {}",
            root.display()
        ))
    })?;
    let mut skipped = 0usize;
    let train_pool = load_class_folders(&class_root, &mut skipped)?;
    if train_pool.is_empty() {
        return Err(DatasetError::Ingestion("archive contains no decodable images".into()));
    }

    let split = match load_official_test(root, &mut skipped) {
        Some(test) => DatasetSplit { train: train_pool, test, seed },
        None => split_dataset(train_pool, 0.8, seed)?,
    };

    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for s in split.train.iter().chain(split.test.iter()) {
        *histogram.entry(s.label).or_default() += 1;
    }
    info!(
        "gtsrb: {} train / {} test, {} classes, {skipped} skipped; histogram {:?}",
        split.train.len(),
        split.test.len(),
        histogram.len(),
        histogram
    );
    if histogram.len() != GTSRB_NUM_CLASSES {
        warn!(
            "gtsrb: expected {GTSRB_NUM_CLASSES} classes, found {}",
            histogram.len()
        );
    }
    Ok(split)
}
