//! IDX image and label files (big-endian header, raw u8 payload).

use crate::hist::Histogram;
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad IDX magic {0:#010x}")]
    BadMagic(u32),
    #[error("file shorter than the header claims (need {need}, have {have})")]
    TruncatedFile { need: usize, have: usize },
    #[error("{0} trailing bytes after the declared payload")]
    TrailingBytes(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Parsed image file, with all-zero images skipped rather than failing.
#[derive(Debug)]
pub struct IdxImages {
    pub histograms: Vec<Histogram>,
    /// Indices of images that were skipped because every pixel was zero.
    pub skipped_all_zero: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

fn read_u32(bytes: &[u8], off: usize) -> Result<u32, IdxError> {
    bytes
        .get(off..off + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(IdxError::TruncatedFile {
            need: off + 4,
            have: bytes.len(),
        })
}

/// Parses an IDX u8 image tensor (`magic 0x00000803`), normalizing each
/// image to a histogram.
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic(magic));
    }
    let count = read_u32(bytes, 4)? as usize;
    let height = read_u32(bytes, 8)? as usize;
    let width = read_u32(bytes, 12)? as usize;
    let need = count
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_add(16))
        .ok_or(IdxError::TruncatedFile {
            need: usize::MAX,
            have: bytes.len(),
        })?;
    if bytes.len() < need {
        return Err(IdxError::TruncatedFile {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(IdxError::TrailingBytes(bytes.len() - need));
    }
    let mut histograms = Vec::with_capacity(count);
    let mut skipped_all_zero = Vec::new();
    let px = height * width;
    for i in 0..count {
        let raw: Vec<f64> = bytes[16 + i * px..16 + (i + 1) * px]
            .iter()
            .map(|&b| b as f64)
            .collect();
        match Histogram::normalize(&raw, height, width) {
            Ok(h) => histograms.push(h),
            Err(_) => skipped_all_zero.push(i),
        }
    }
    Ok(IdxImages {
        histograms,
        skipped_all_zero,
        height,
        width,
    })
}

/// Parses an IDX u8 label vector (`magic 0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic(magic));
    }
    let count = read_u32(bytes, 4)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(IdxError::TruncatedFile {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(IdxError::TrailingBytes(bytes.len() - need));
    }
    Ok(bytes[8..].to_vec())
}

/// Serializes u8 images into the IDX format (fixture and export helper).
pub fn write_idx_images(images: &[Vec<u8>], height: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * height * width);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(height as u32).to_be_bytes());
    out.extend_from_slice(&(width as u32).to_be_bytes());
    for img in images {
        debug_assert_eq!(img.len(), height * width);
        out.extend_from_slice(img);
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
