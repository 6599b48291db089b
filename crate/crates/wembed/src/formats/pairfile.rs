//! Pair-dataset file: magic `WPR1`, little-endian header (record count
//! u64, collection checksum u32), then records (u32 idx1, u32 idx2, f64 y).

use crate::pipeline::PairSample;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"WPR1";
const HEADER_LEN: usize = 4 + 8 + 4;
const RECORD_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum PairFileError {
    #[error("bad pair-file magic")]
    BadMagic,
    #[error("file length {have} does not match header count {count}")]
    LengthMismatch { count: u64, have: usize },
    #[error("record {index} has invalid label {y}")]
    InvalidLabel { index: usize, y: f64 },
    #[error("collection checksum mismatch: file {file:#010x}, data {data:#010x}")]
    CollectionMismatch { file: u32, data: u32 },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn write_pairs(pairs: &[PairSample], collection_checksum: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + pairs.len() * RECORD_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
    out.extend_from_slice(&collection_checksum.to_le_bytes());
    for p in pairs {
        out.extend_from_slice(&(p.idx1 as u32).to_le_bytes());
        out.extend_from_slice(&(p.idx2 as u32).to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
    }
    out
}

/// Parses a pair file; labels must be finite and nonnegative. If
/// `expect_checksum` is given, the stored collection checksum must match.
pub fn parse_pairs(
    bytes: &[u8],
    expect_checksum: Option<u32>,
) -> Result<(Vec<PairSample>, u32), PairFileError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(PairFileError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(PairFileError::LengthMismatch {
            count: 0,
            have: bytes.len(),
        });
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let checksum = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let need = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(RECORD_LEN))
        .and_then(|b| b.checked_add(HEADER_LEN));
    if need != Some(bytes.len()) {
        return Err(PairFileError::LengthMismatch {
            count,
            have: bytes.len(),
        });
    }
    if let Some(expected) = expect_checksum {
        if expected != checksum {
            return Err(PairFileError::CollectionMismatch {
                file: checksum,
                data: expected,
            });
        }
    }
    let mut pairs = Vec::with_capacity(count as usize);
    for index in 0..count as usize {
        let off = HEADER_LEN + index * RECORD_LEN;
        let idx1 = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let idx2 = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap()) as usize;
        let y = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        if !y.is_finite() || y < 0.0 {
            return Err(PairFileError::InvalidLabel { index, y });
        }
        pairs.push(PairSample { idx1, idx2, y });
    }
    Ok((pairs, checksum))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<PairSample> {
        vec![
            PairSample {
                idx1: 0,
                idx2: 3,
                y: 1.5,
            },
            PairSample {
                idx1: 2,
                idx2: 2,
                y: 0.0,
            },
        ]
    }

    #[test]
    fn roundtrip() {
        let bytes = write_pairs(&sample(), 0xDEAD_BEEF);
        let (pairs, crc) = parse_pairs(&bytes, Some(0xDEAD_BEEF)).unwrap();
        assert_eq!(crc, 0xDEAD_BEEF);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].idx2, 3);
        assert_eq!(pairs[1].y, 0.0);
    }

    #[test]
    fn typed_rejections() {
        let bytes = write_pairs(&sample(), 1);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(parse_pairs(&bad, None), Err(PairFileError::BadMagic)));
        assert!(matches!(
            parse_pairs(&bytes[..bytes.len() - 3], None),
            Err(PairFileError::LengthMismatch { .. })
        ));
        assert!(matches!(
            parse_pairs(&bytes, Some(2)),
            Err(PairFileError::CollectionMismatch { .. })
        ));
        // Flip the label sign bit of record 0.
        let mut neg = bytes.clone();
        let off = 16 + 8 + 7;
        neg[off] ^= 0x80;
        assert!(matches!(
            parse_pairs(&neg, None),
            Err(PairFileError::InvalidLabel { index: 0, .. })
        ));
    }
}
