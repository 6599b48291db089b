//! Binary PGM (P5) emission of histogram grids, plus a minimal reader for
//! round-trip checks.

use crate::hist::Histogram;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("empty histogram list")]
    EmptyInput,
    #[error("histogram dimensions are not uniform")]
    MixedDims,
    #[error("not a P5 PGM")]
    BadMagic,
    #[error("malformed PGM header")]
    MalformedHeader,
    #[error("truncated PGM payload")]
    Truncated,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

const SEPARATOR: u8 = 0;

/// Renders histograms as 8-bit tiles (each rescaled by its own max) laid
/// out row-major with 1-pixel separators.
pub fn render_image_grid(hists: &[Histogram], cols: usize) -> Result<(Vec<u8>, usize, usize), PgmError> {
    if hists.is_empty() || cols == 0 {
        return Err(PgmError::EmptyInput);
    }
    let (th, tw) = (hists[0].height(), hists[0].width());
    if hists.iter().any(|h| h.height() != th || h.width() != tw) {
        return Err(PgmError::MixedDims);
    }
    let rows = hists.len().div_ceil(cols);
    let out_h = rows * th + rows.saturating_sub(1);
    let out_w = cols * tw + cols.saturating_sub(1);
    let mut pixels = vec![SEPARATOR; out_h * out_w];
    for (i, h) in hists.iter().enumerate() {
        let (gr, gc) = (i / cols, i % cols);
        let max = h.mass().iter().cloned().fold(0.0f64, f64::max);
        let y0 = gr * (th + 1);
        let x0 = gc * (tw + 1);
        for r in 0..th {
            for c in 0..tw {
                let v = if max > 0.0 {
                    (h.mass()[r * tw + c] / max * 255.0).round() as u8
                } else {
                    0
                };
                pixels[(y0 + r) * out_w + (x0 + c)] = v;
            }
        }
    }
    Ok((pixels, out_h, out_w))
}

/// Writes the tiled grid as a binary PGM file.
pub fn emit_image_grid(hists: &[Histogram], cols: usize, path: &std::path::Path) -> Result<(), PgmError> {
    let (pixels, h, w) = render_image_grid(hists, cols)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Minimal P5 reader (whitespace-separated header, maxval <= 255).
pub fn parse_pgm(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize), PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PgmError::MalformedHeader);
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PgmError::MalformedHeader)?;
        fields.push(v);
    }
    pos += 1; // single whitespace after maxval
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval > 255 {
        return Err(PgmError::MalformedHeader);
    }
    if bytes.len() < pos + w * h {
        return Err(PgmError::Truncated);
    }
    Ok((bytes[pos..pos + w * h].to_vec(), h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_histogram_renders_constant_tile() {
        let h = Histogram::normalize(&[1.0; 9], 3, 3).unwrap();
        let (px, oh, ow) = render_image_grid(std::slice::from_ref(&h), 1).unwrap();
        assert_eq!((oh, ow), (3, 3));
        assert!(px.iter().all(|&v| v == 255));
    }

    #[test]
    fn dirac_histogram_renders_single_bright_pixel() {
        let mut raw = vec![0.0; 16];
        raw[5] = 1.0;
        let h = Histogram::normalize(&raw, 4, 4).unwrap();
        let (px, _, _) = render_image_grid(std::slice::from_ref(&h), 1).unwrap();
        assert_eq!(px.iter().filter(|&&v| v == 255).count(), 1);
        assert_eq!(px.iter().filter(|&&v| v == 0).count(), 15);
        assert_eq!(px[5], 255);
    }

    #[test]
    fn emitted_grid_reparses_with_tile_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.pgm");
        let mut hists = Vec::new();
        for i in 0..3 {
            let mut raw = vec![0.0; 4];
            raw[i % 4] = 1.0;
            hists.push(Histogram::normalize(&raw, 2, 2).unwrap());
        }
        emit_image_grid(&hists, 2, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let (px, h, w) = parse_pgm(&bytes).unwrap();
        // 2 rows x 2 cols of 2x2 tiles with 1px separators.
        assert_eq!((h, w), (5, 5));
        // Tile (0,0) is a dirac at its bin 0 => pixel (0,0) bright.
        assert_eq!(px[0], 255);
        // Tile (0,1) starts at column 3; its dirac is at bin 1 => (0, 4).
        assert_eq!(px[4], 255);
        // Tile (1,0) starts at row 3; dirac at bin 2 => local (1,0) -> (4,0).
        assert_eq!(px[4 * w], 255);
    }
}
