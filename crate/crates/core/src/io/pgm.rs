//! Binary PGM (P5) rasters.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::input(format!("PGM: {}", msg.into()))
}

/// Decode a P5 image into intensities in `[0, 1]`, indexed `[row, col]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad(format!("magic {:?}, only P5 is supported", fields[0])));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} {s:?}")));
    let (w, h, maxval) = (
        num(fields[1], "width")?,
        num(fields[2], "height")?,
        num(fields[3], "maxval")?,
    );
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad(format!("unsupported header {w}x{h}, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let need = w * h * depth;
    let data = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated pixel data"))?;
    let scale = maxval as f64;
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        let i = (r * w + c) * depth;
        let v = if depth == 1 {
            data[i] as f64
        } else {
            u16::from_be_bytes([data[i], data[i + 1]]) as f64
        };
        v / scale
    }))
}

pub fn read_pgm(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    decode_pgm(&bytes)
}

/// Encode intensities in `[0, 1]` as an 8-bit P5 image.
pub fn encode_pgm(img: &Array2<f64>) -> Vec<u8> {
    let (h, w) = img.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(img: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_round_trip() {
        let img = Array2::from_shape_fn((5, 7), |(r, c)| ((r * 7 + c) * 7) as f64 / 255.0);
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sixteen_bit_and_comments() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n1000\n".to_vec();
        bytes.extend([0x01, 0xF4, 0x03, 0xE8]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img[[0, 0]], 0.5);
        assert_eq!(img[[0, 1]], 1.0);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\0\0").is_err());
    }
}
