//! Binary PPM (`P6`, maxval 255).

use super::ImageRGB8;
use crate::error::{Error, Result};

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    /// Skip whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    /// Returns the value and the offset where its digits start.
    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        let before = self.pos;
        self.skip_separators();
        if self.pos == before {
            return self.fail(format!("expected whitespace before {what}"));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        let v = text.parse().map_err(|_| Error::Parse {
            offset: start,
            msg: format!("{what} out of range"),
        })?;
        Ok((v, start))
    }
}

pub fn read_ppm(bytes: &[u8]) -> Result<ImageRGB8> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Parse {
            offset: 0,
            msg: "missing P6 magic".into(),
        });
    }
    let mut h = Header { bytes, pos: 2 };
    let (width, _) = h.number("width")?;
    let (height, _) = h.number("height")?;
    let (maxval, maxval_at) = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: maxval_at,
            msg: format!("maxval {maxval} unsupported, expected 255"),
        });
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return h.fail("expected a single whitespace byte after maxval"),
    }
    if width == 0 || height == 0 {
        return h.fail(format!("empty image {width}x{height}"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Parse {
            offset: h.pos,
            msg: "image too large".into(),
        })?;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            msg: format!("truncated payload: {} of {need} bytes", payload.len()),
        });
    }
    ImageRGB8::new(width, height, payload[..need].to_vec())
}

pub fn write_ppm(img: &ImageRGB8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}
