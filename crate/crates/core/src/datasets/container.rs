//! Binary dataset container: the on-disk format for materialized splits and
//! persisted adversarial batches.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   8  b"SEMDS001"
//! kind    1  0 = classification, 1 = plates
//! count   4  u32 sample count
//! c,h,w   12 u32 image dims
//! per sample:
//!   classification: label u32
//!   plates:         len u32, then len u32 character ids
//!   pixels          c*h*w f32
//! ```

use super::{DatasetError, LabeledImage, PlateSample};
use ndarray::Array3;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SEMDS001";

/// Samples of either task in container form.
#[derive(Debug, Clone)]
pub enum TaskData {
    Classification(Vec<LabeledImage>),
    Plates(Vec<PlateSample>),
}

impl TaskData {
    pub fn len(&self) -> usize {
        match self {
            TaskData::Classification(v) => v.len(),
            TaskData::Plates(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn image_dims(&self) -> Result<(usize, usize, usize), DatasetError> {
        let shape = match self {
            TaskData::Classification(v) => {
                v.first().map(|s| s.pixels.shape().to_vec())
            }
            TaskData::Plates(v) => v.first().map(|s| s.pixels.shape().to_vec()),
        }
        .ok_or_else(|| DatasetError::Validation("cannot persist an empty dataset".into()))?;
        Ok((shape[0], shape[1], shape[2]))
    }
}

pub fn save_container(data: &TaskData, path: &Path) -> Result<(), DatasetError> {
    let (c, h, w) = data.image_dims()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(match data {
        TaskData::Classification(_) => 0u8,
        TaskData::Plates(_) => 1u8,
    });
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    for d in [c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let push_pixels = |out: &mut Vec<u8>, px: &crate::Image| -> Result<(), DatasetError> {
        if px.shape() != [c, h, w] {
            return Err(DatasetError::Validation(format!(
                "inconsistent image shape {:?} vs ({c},{h},{w})",
                px.shape()
            )));
        }
        for v in px.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    };
    match data {
        TaskData::Classification(samples) => {
            for s in samples {
                out.extend_from_slice(&(s.label as u32).to_le_bytes());
                push_pixels(&mut out, &s.pixels)?;
            }
        }
        TaskData::Plates(samples) => {
            for s in samples {
                out.extend_from_slice(&(s.chars.len() as u32).to_le_bytes());
                for &cid in &s.chars {
                    out.extend_from_slice(&(cid as u32).to_le_bytes());
                }
                push_pixels(&mut out, &s.pixels)?;
            }
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<TaskData, DatasetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], DatasetError> {
        if *cursor + n > bytes.len() {
            return Err(DatasetError::Ingestion(format!(
                "{}: truncated container",
                path.display()
            )));
        }
        let s = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(s)
    };
    let read_u32 = |cursor: &mut usize| -> Result<u32, DatasetError> {
        let s = take(cursor, 4)?;
        Ok(u32::from_le_bytes(s.try_into().expect("4 bytes")))
    };

    if take(&mut cursor, 8)? != MAGIC {
        return Err(DatasetError::Ingestion(format!(
            "{}: not a dataset container",
            path.display()
        )));
    }
    let kind = take(&mut cursor, 1)?[0];
    let count = read_u32(&mut cursor)? as usize;
    let c = read_u32(&mut cursor)? as usize;
    let h = read_u32(&mut cursor)? as usize;
    let w = read_u32(&mut cursor)? as usize;
    let pixel_len = c * h * w;
    let read_pixels = |cursor: &mut usize| -> Result<crate::Image, DatasetError> {
        let raw = take(cursor, pixel_len * 4)?;
        let mut v = Vec::with_capacity(pixel_len);
        for chunk in raw.chunks_exact(4) {
            v.push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
        Array3::from_shape_vec((c, h, w), v)
            .map_err(|e| DatasetError::Ingestion(format!("bad pixel block: {e}")))
    };

    match kind {
        0 => {
            let mut samples = Vec::with_capacity(count);
            for _ in 0..count {
                let label = read_u32(&mut cursor)? as usize;
                samples.push(LabeledImage { pixels: read_pixels(&mut cursor)?, label });
            }
            Ok(TaskData::Classification(samples))
        }
        1 => {
            let mut samples = Vec::with_capacity(count);
            for _ in 0..count {
                let len = read_u32(&mut cursor)? as usize;
                let mut chars = Vec::with_capacity(len);
                for _ in 0..len {
                    chars.push(read_u32(&mut cursor)? as usize);
                }
                samples.push(PlateSample { pixels: read_pixels(&mut cursor)?, chars });
            }
            Ok(TaskData::Plates(samples))
        }
        k => Err(DatasetError::Ingestion(format!("unknown container kind {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn classification_round_trip_is_bit_exact() {
        let samples: Vec<LabeledImage> = (0..5)
            .map(|i| LabeledImage {
                pixels: Array3::from_shape_fn((3, 4, 6), |(c, y, x)| {
                    (i as f32 * 0.17 + c as f32 * 0.01 + y as f32 * 0.002 + x as f32 * 0.0003)
                        .fract()
                }),
                label: i,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.semds");
        save_container(&TaskData::Classification(samples.clone()), &path).unwrap();
        match load_container(&path).unwrap() {
            TaskData::Classification(loaded) => {
                assert_eq!(loaded.len(), 5);
                for (a, b) in loaded.iter().zip(samples.iter()) {
                    assert_eq!(a.label, b.label);
                    assert_eq!(a.pixels, b.pixels);
                }
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn plates_round_trip() {
        let samples: Vec<PlateSample> = (0..3)
            .map(|i| PlateSample {
                pixels: Array3::from_elem((3, 24, 94), 0.25 * i as f32),
                chars: vec![1, 40, 60, i + 2],
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plates.semds");
        save_container(&TaskData::Plates(samples.clone()), &path).unwrap();
        match load_container(&path).unwrap() {
            TaskData::Plates(loaded) => {
                for (a, b) in loaded.iter().zip(samples.iter()) {
                    assert_eq!(a.chars, b.chars);
                    assert_eq!(a.pixels, b.pixels);
                }
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.semds");
        std::fs::write(&path, b"not a container").unwrap();
        assert!(load_container(&path).is_err());

        let samples = vec![LabeledImage { pixels: Array3::zeros((3, 4, 4)), label: 0 }];
        save_container(&TaskData::Classification(samples), &path).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 7]).unwrap();
        assert!(load_container(&path).is_err());
    }
}
