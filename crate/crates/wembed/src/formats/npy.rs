//! NPY v1.0/2.0 parser for u8 bitmap arrays of shape `(N, d)` or
//! `(N, h, w)`, C-order only.

use crate::hist::Histogram;
use thiserror::Error;

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("bad NPY magic")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported dtype {0:?} (only u8 '|u1' bitmaps)")]
    UnsupportedDtype(String),
    #[error("column-major (fortran_order) arrays are not supported")]
    UnsupportedOrder,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("file shorter than the header claims (need {need}, have {have})")]
    TruncatedFile { need: usize, have: usize },
    #[error("{0} trailing bytes after the declared payload")]
    TrailingBytes(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct NpyBitmaps {
    pub histograms: Vec<Histogram>,
    pub skipped_all_zero: Vec<usize>,
    pub height: usize,
    pub width: usize,
}

fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str, NpyError> {
    let pos = header
        .find(key)
        .ok_or_else(|| NpyError::MalformedHeader(format!("missing {key}")))?;
    Ok(header[pos + key.len()..].trim_start_matches(':').trim_start())
}

/// Parses an NPY u8 array and normalizes each row/image into a histogram.
/// Rank-2 arrays `(N, d)` are reshaped to `sqrt(d) x sqrt(d)` when `d` is a
/// perfect square, else to `1 x d`.
pub fn parse_npy_bitmaps(bytes: &[u8]) -> Result<NpyBitmaps, NpyError> {
    if bytes.len() < 8 {
        return Err(NpyError::BadMagic);
    }
    if &bytes[..6] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, header_start) = match (major, minor) {
        (1, 0) => {
            if bytes.len() < 10 {
                return Err(NpyError::TruncatedFile {
                    need: 10,
                    have: bytes.len(),
                });
            }
            (
                u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize,
                10usize,
            )
        }
        (2, 0) => {
            if bytes.len() < 12 {
                return Err(NpyError::TruncatedFile {
                    need: 12,
                    have: bytes.len(),
                });
            }
            (
                u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
                12usize,
            )
        }
        _ => return Err(NpyError::UnsupportedVersion(major, minor)),
    };
    let data_start = header_start + header_len;
    if bytes.len() < data_start {
        return Err(NpyError::TruncatedFile {
            need: data_start,
            have: bytes.len(),
        });
    }
    let header = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| NpyError::MalformedHeader("header is not ASCII".into()))?;

    let descr_raw = header_field(header, "'descr'")?;
    let descr: String = descr_raw
        .trim_start_matches(['\'', '"'])
        .chars()
        .take_while(|&c| c != '\'' && c != '"')
        .collect();
    if descr != "|u1" {
        return Err(NpyError::UnsupportedDtype(descr));
    }

    let order_raw = header_field(header, "'fortran_order'")?;
    if order_raw.starts_with("True") {
        return Err(NpyError::UnsupportedOrder);
    }
    if !order_raw.starts_with("False") {
        return Err(NpyError::MalformedHeader("unreadable fortran_order".into()));
    }

    let shape_raw = header_field(header, "'shape'")?;
    let open = shape_raw
        .find('(')
        .ok_or_else(|| NpyError::MalformedHeader("missing shape tuple".into()))?;
    let close = shape_raw
        .find(')')
        .ok_or_else(|| NpyError::MalformedHeader("missing shape tuple".into()))?;
    let dims: Vec<usize> = shape_raw[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| NpyError::MalformedHeader(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<_, _>>()?;

    let (count, height, width) = match dims.as_slice() {
        [n, d] => {
            let side = (*d as f64).sqrt().round() as usize;
            if side * side == *d {
                (*n, side, side)
            } else {
                (*n, 1usize, *d)
            }
        }
        [n, h, w] => (*n, *h, *w),
        other => {
            return Err(NpyError::MalformedHeader(format!(
                "unsupported shape rank {}",
                other.len()
            )))
        }
    };

    let px = height
        .checked_mul(width)
        .ok_or_else(|| NpyError::MalformedHeader("image size overflows".into()))?;
    let need = count
        .checked_mul(px)
        .and_then(|v| v.checked_add(data_start))
        .ok_or_else(|| NpyError::MalformedHeader("payload size overflows".into()))?;
    if bytes.len() < need {
        return Err(NpyError::TruncatedFile {
            need,
            have: bytes.len(),
        });
    }
    if bytes.len() > need {
        return Err(NpyError::TrailingBytes(bytes.len() - need));
    }

    let mut histograms = Vec::with_capacity(count);
    let mut skipped_all_zero = Vec::new();
    for i in 0..count {
        let raw: Vec<f64> = bytes[data_start + i * px..data_start + (i + 1) * px]
            .iter()
            .map(|&b| b as f64)
            .collect();
        match Histogram::normalize(&raw, height, width) {
            Ok(h) => histograms.push(h),
            Err(_) => skipped_all_zero.push(i),
        }
    }
    Ok(NpyBitmaps {
        histograms,
        skipped_all_zero,
        height,
        width,
    })
}

/// Serializes u8 images into NPY v1.0 with shape `(N, h*w)`.
pub fn write_npy_bitmaps(images: &[Vec<u8>], height: usize, width: usize) -> Vec<u8> {
    let d = height * width;
    let dict = format!(
        "{{'descr': '|u1', 'fortran_order': False, 'shape': ({}, {}), }}",
        images.len(),
        d
    );
    // Pad so that data start is 64-byte aligned, newline-terminated.
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    let header = format!("{dict}{}\n", " ".repeat(pad));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(1);
    out.push(0);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for img in images {
        debug_assert_eq!(img.len(), d);
        out.extend_from_slice(img);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Byte-level find/replace (the magic byte is not valid UTF-8, so
    /// string passes would mangle it). Replacement must be same length.
    fn patch(bytes: &[u8], from: &[u8], to: &[u8]) -> Vec<u8> {
        assert_eq!(from.len(), to.len());
        let pos = bytes
            .windows(from.len())
            .position(|w| w == from)
            .expect("pattern present");
        let mut out = bytes.to_vec();
        out[pos..pos + to.len()].copy_from_slice(to);
        out
    }

    #[test]
    fn synthetic_flat_fixture() {
        let imgs: Vec<Vec<u8>> = (0..3)
            .map(|i| (0..784).map(|p| ((p + i) % 7) as u8).collect())
            .collect();
        let bytes = write_npy_bitmaps(&imgs, 28, 28);
        let parsed = parse_npy_bitmaps(&bytes).unwrap();
        assert_eq!(parsed.histograms.len(), 3);
        assert_eq!((parsed.height, parsed.width), (28, 28));
    }

    #[test]
    fn float_dtype_rejected() {
        let imgs = vec![vec![1u8; 4]];
        let bytes = write_npy_bitmaps(&imgs, 2, 2);
        let mutated = patch(&bytes, b"|u1", b"<f8");
        assert!(matches!(
            parse_npy_bitmaps(&mutated),
            Err(NpyError::UnsupportedDtype(_))
        ));
    }

    #[test]
    fn fortran_order_rejected() {
        let imgs = vec![vec![1u8; 4]];
        let bytes = write_npy_bitmaps(&imgs, 2, 2);
        // Keep the header length identical: False -> True + one pad space.
        let mutated = patch(&bytes, b"False,", b"True ,");
        assert!(matches!(
            parse_npy_bitmaps(&mutated),
            Err(NpyError::UnsupportedOrder)
        ));
    }

    #[test]
    fn truncation_and_magic_errors() {
        let imgs = vec![vec![3u8; 9]];
        let bytes = write_npy_bitmaps(&imgs, 3, 3);
        assert!(matches!(
            parse_npy_bitmaps(&bytes[..bytes.len() - 1]),
            Err(NpyError::TruncatedFile { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_npy_bitmaps(&bad), Err(NpyError::BadMagic)));
    }

    #[test]
    fn rank3_shape_supported() {
        let imgs = vec![vec![1u8; 12]];
        let mut bytes = write_npy_bitmaps(&imgs, 3, 4);
        // 12 is not a perfect square; flat shape gives 1x12.
        let parsed = parse_npy_bitmaps(&bytes).unwrap();
        assert_eq!((parsed.height, parsed.width), (1, 12));
        // Rewrite header as (1, 3, 4): same length tuple "(1, 12)" -> "(1,3,4)".
        bytes = patch(&bytes, b"(1, 12)", b"(1,3,4)");
        let parsed = parse_npy_bitmaps(&bytes).unwrap();
        assert_eq!((parsed.height, parsed.width), (3, 4));
    }
}
