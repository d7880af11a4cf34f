//! Netpbm graymap reading and writing (P2 ASCII and P5 binary).

use std::fs;
use std::path::Path;

use super::{BinaryImage, GrayImage, ImageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// `P2`, whitespace-separated decimal samples.
    Ascii,
    /// `P5`, one byte per sample for `maxval < 256`, otherwise two bytes big-endian.
    Binary,
}

fn parse_err(offset: usize, message: impl Into<String>) -> ImageError {
    ImageError::Parse { offset, message: message.into() }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.data.get(self.pos) {
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

    fn read_uint(&mut self, what: &str) -> Result<u64, ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.data.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.data.get(self.pos) {
                None => parse_err(start, format!("unexpected end of data reading {what}")),
                Some(b) => parse_err(start, format!("expected digit for {what}, found byte 0x{b:02x}")),
            });
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} does not fit in 64 bits")))
    }
}

/// Decodes a P2 or P5 byte stream.
pub fn decode_pgm(data: &[u8]) -> Result<GrayImage, ImageError> {
    if data.is_empty() {
        return Err(parse_err(0, "empty input"));
    }
    let format = match data.get(..2) {
        Some(b"P2") => PgmFormat::Ascii,
        Some(b"P5") => PgmFormat::Binary,
        _ => return Err(parse_err(0, "missing P2/P5 magic number")),
    };
    let mut cur = Cursor { data, pos: 2 };
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    cur.skip_whitespace_and_comments();
    let maxval_offset = cur.pos;
    let maxval = cur.read_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(maxval_offset, format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(maxval_offset, format!("maxval {maxval} outside 1..=65535")));
    }
    let count = usize::try_from(width * height).map_err(|_| parse_err(0, "image too large"))?;
    let maxval = maxval as u32;

    let pixels = match format {
        PgmFormat::Ascii => {
            let mut px = Vec::with_capacity(count);
            for i in 0..count {
                cur.skip_whitespace_and_comments();
                let at = cur.pos;
                let v = cur.read_uint(&format!("sample {i}"))?;
                if v > u64::from(maxval) {
                    return Err(parse_err(at, format!("sample {v} exceeds maxval {maxval}")));
                }
                px.push(v as u32);
            }
            px
        }
        PgmFormat::Binary => {
            // Exactly one whitespace byte separates the header from the raster.
            match data.get(cur.pos) {
                Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
                Some(_) => return Err(parse_err(cur.pos, "expected whitespace after maxval")),
                None => return Err(parse_err(cur.pos, "truncated header")),
            }
            let bytes_per = if maxval < 256 { 1 } else { 2 };
            let payload = &data[cur.pos..];
            if payload.len() < count * bytes_per {
                return Err(parse_err(
                    data.len(),
                    format!("truncated payload: need {} bytes, have {}", count * bytes_per, payload.len()),
                ));
            }
            let mut px = Vec::with_capacity(count);
            for i in 0..count {
                let v = if bytes_per == 1 {
                    u32::from(payload[i])
                } else {
                    u32::from(u16::from_be_bytes([payload[2 * i], payload[2 * i + 1]]))
                };
                if v > maxval {
                    return Err(parse_err(cur.pos + i * bytes_per, format!("sample {v} exceeds maxval {maxval}")));
                }
                px.push(v);
            }
            px
        }
    };
    GrayImage::new(width as usize, height as usize, maxval, pixels)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
    decode_pgm(&data)
}

pub fn encode_pgm(img: &GrayImage, format: PgmFormat) -> Result<Vec<u8>, ImageError> {
    if img.maxval() > 65535 {
        return Err(ImageError::Invalid(format!("maxval {} cannot be stored as PGM", img.maxval())));
    }
    let magic = match format {
        PgmFormat::Ascii => "P2",
        PgmFormat::Binary => "P5",
    };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width(), img.height(), img.maxval()).into_bytes();
    match format {
        PgmFormat::Ascii => {
            for row in img.pixels().chunks(img.width()) {
                let line: Vec<String> = row.iter().map(u32::to_string).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
        PgmFormat::Binary => {
            if img.maxval() < 256 {
                out.extend(img.pixels().iter().map(|&p| p as u8));
            } else {
                for &p in img.pixels() {
                    out.extend_from_slice(&(p as u16).to_be_bytes());
                }
            }
        }
    }
    Ok(out)
}

/// Writes a grayscale image as P5, keeping its maxval.
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let bytes = encode_pgm(img, PgmFormat::Binary)?;
    fs::write(path, bytes).map_err(|source| ImageError::Io { path: path.display().to_string(), source })
}

/// Writes a binary image as P5 with maxval 255, ink stored as 255.
pub fn save_binary_pgm(img: &BinaryImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    save_pgm(&img.to_gray(), path)
}
