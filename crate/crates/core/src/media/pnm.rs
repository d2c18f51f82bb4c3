//! Binary netpbm: P6 (RGB) and P5 (gray), maxval 255 only.

use std::path::Path;

use super::{read_bytes, write_bytes, Image};
use crate::error::{FileKind, FormatError};
use crate::Result;

fn err(field: &str, message: impl Into<String>) -> FormatError {
    FormatError::new(FileKind::Pnm, field, message)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    /// Skips whitespace and `#` comments between header tokens.
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize, FormatError> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(err(field, "expected a decimal number"));
        }
        // At most 9 digits keeps the parse overflow-free.
        if self.pos - start > 9 {
            return Err(err(field, "value too large"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        Ok(text.parse().expect("bounded digits"))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image, FormatError> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(err("magic", "expected P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(err("magic", "missing separator after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 {
        return Err(err("width", "must be >= 1"));
    }
    if height == 0 {
        return Err(err("height", "must be >= 1"));
    }
    if maxval != 255 {
        return Err(err("maxval", format!("unsupported maxval {maxval}")));
    }
    match cur.bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(err("maxval", "missing single whitespace before payload")),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| err("payload", "dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(err(
            "payload",
            format!("truncated: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(err(
            "payload",
            format!("{} trailing bytes after pixel data", payload.len() - expected),
        ));
    }
    Ok(Image::new(width, height, channels, payload.to_vec()).expect("validated extents"))
}

/// Canonical header `P6\n<w> <h>\n255\n` (`P5` for gray) followed by raw pixels.
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = read_bytes(path.as_ref())?;
    Ok(decode_pnm(&bytes)?)
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pnm(image))
}
