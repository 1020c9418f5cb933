//! Image files and crash-safe writes.
//!
//! Aerial images use little-endian PFM (`Pf`, negative scale, bottom-to-top
//! scanlines). Masks and resist images use 8-bit binary PGM (`P5`) with
//! 0 = absorber and 255 = open.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{LithoError, Result};
use crate::grid::RealGrid;

/// Writes `bytes` to a sibling temp file then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| LithoError::config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn encode_pfm(img: &RealGrid) -> Vec<u8> {
    let (rows, cols) = img.shape();
    let mut out = format!("Pf\n{cols} {rows}\n-1.0\n").into_bytes();
    out.reserve(rows * cols * 4);
    for r in (0..rows).rev() {
        for c in 0..cols {
            out.extend_from_slice(&(img[(r, c)] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<RealGrid> {
    let (tokens, body) = header_tokens(bytes, 4)?;
    if tokens[0] != "Pf" {
        return Err(LithoError::format(format!("expected a grayscale PFM, got {:?}", tokens[0])));
    }
    let cols = parse_dim(&tokens[1])?;
    let rows = parse_dim(&tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| LithoError::format(format!("bad PFM scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(LithoError::format("PFM scale must be nonzero"));
    }
    let little = scale < 0.0;
    if body.len() != rows * cols * 4 {
        return Err(LithoError::format(format!(
            "PFM payload has {} bytes, expected {}",
            body.len(),
            rows * cols * 4
        )));
    }
    let mut data = vec![0.0; rows * cols];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (r, c) = (rows - 1 - k / cols, k % cols);
        data[r * cols + c] = v as f64;
    }
    RealGrid::from_vec(rows, cols, data)
}

/// Binary grid to PGM; pixels `>= 0.5` are written as 255.
pub fn encode_pgm(img: &RealGrid) -> Vec<u8> {
    let (rows, cols) = img.shape();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(img.as_slice().iter().map(|&v| if v >= 0.5 { 255u8 } else { 0 }));
    out
}

/// PGM to a binary grid, thresholding at 128.
pub fn decode_pgm(bytes: &[u8]) -> Result<RealGrid> {
    let (tokens, body) = header_tokens(bytes, 4)?;
    if tokens[0] != "P5" {
        return Err(LithoError::format(format!("expected a binary PGM, got {:?}", tokens[0])));
    }
    let cols = parse_dim(&tokens[1])?;
    let rows = parse_dim(&tokens[2])?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| LithoError::format(format!("bad PGM maxval {:?}", tokens[3])))?;
    if maxval != 255 {
        return Err(LithoError::format(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    if body.len() != rows * cols {
        return Err(LithoError::format(format!(
            "PGM payload has {} bytes, expected {}",
            body.len(),
            rows * cols
        )));
    }
    let data = body.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }).collect();
    RealGrid::from_vec(rows, cols, data)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &RealGrid) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pfm(img))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<RealGrid> {
    decode_pfm(&read(path.as_ref())?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &RealGrid) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(img))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<RealGrid> {
    decode_pgm(&read(path.as_ref())?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LithoError::data(format!("cannot read {}: {e}", path.display())))
}

fn parse_dim(tok: &str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(LithoError::format(format!("bad image dimension {tok:?}"))),
    }
}

/// Splits a netpbm-style header into `count` whitespace-separated tokens
/// (skipping `#` comments) and the payload after the single separator byte.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, &[u8])> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(LithoError::format("truncated image header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(LithoError::format("image header has no payload"));
    }
    Ok((tokens, &bytes[i + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_and_orientation() {
        let img = RealGrid::from_fn(3, 4, |r, c| r as f64 * 10.0 + c as f64 * 0.25);
        let bytes = encode_pfm(&img);
        assert!(bytes.starts_with(b"Pf\n4 3\n-1.0\n"));
        // First stored scanline is the bottom row.
        let body = &bytes[bytes.len() - 48..];
        assert_eq!(f32::from_le_bytes(body[..4].try_into().unwrap()), 20.0);
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_round_trip() {
        let img = RealGrid::from_fn(5, 2, |r, c| ((r + c) % 2) as f64);
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n2 5\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_thresholds_gray_levels() {
        let mut bytes = b"P5\n# comment\n3 1\n255\n".to_vec();
        bytes.extend([127u8, 128, 200]);
        assert_eq!(decode_pgm(&bytes).unwrap().as_slice(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n\x00"), Err(LithoError::Format(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x00"), Err(LithoError::Format(_))));
        assert!(matches!(decode_pfm(b"Pf\n1"), Err(LithoError::Format(_))));
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_atomic(&p, b"abc").unwrap();
        write_atomic(&p, b"xyz").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"xyz");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
