//! Binary 8-bit PGM (P5) input and output.

use std::fs;
use std::path::Path;

use crate::error::PgmError;
use crate::grid::ImageGrid;

fn parse_err(offset: usize, message: impl Into<String>) -> PgmError {
    PgmError::Parse {
        offset,
        message: message.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PgmError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

/// Decodes a P5 image; intensities are divided by maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(0, "missing P5 magic number"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space();
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(maxval_at, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(parse_err(h.pos, "expected whitespace after maxval")),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| parse_err(0, "image dimensions overflow"))?;
    let data = &bytes[h.pos..];
    if data.len() < n {
        return Err(parse_err(bytes.len(), format!("expected {n} pixel bytes, found {}", data.len())));
    }
    let m = maxval as f64;
    Ok(ImageGrid::new(width, height, data[..n].iter().map(|&b| b as f64 / m).collect())?)
}

/// Encodes as P5 with maxval 255: clamp to `[0, 1]`, then round half away
/// from zero.
pub fn encode_pgm(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.as_slice().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<ImageGrid, PgmError> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(img: &ImageGrid, path: impl AsRef<Path>) -> Result<(), PgmError> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}
