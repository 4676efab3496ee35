//! Binary (P5) and ASCII (P2) PGM with `maxval ≤ 255`.

use std::fs;
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmEncoding {
    Ascii,
    Binary,
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'2' || bytes[1] == b'5') {
        return Err(Error::Image("not a P2/P5 PGM file".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Image("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PGM header number".into()))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Image("missing whitespace after PGM header".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Image("PGM dimensions must be positive".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("unsupported PGM maxval {maxval}")));
    }
    Ok(Header {
        magic: [bytes[0], bytes[1]],
        width,
        height,
        maxval,
        data_start: pos,
    })
}

/// Decodes a PGM. Samples are rescaled to the 0–255 range when `maxval < 255`.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    let count = h.width * h.height;
    let raw: Vec<usize> = if h.magic[1] == b'5' {
        let data = &bytes[h.data_start..];
        if data.len() < count {
            return Err(Error::Image(format!("truncated raster: {} of {count} bytes", data.len())));
        }
        data[..count].iter().map(|&b| b as usize).collect()
    } else {
        let text = std::str::from_utf8(&bytes[h.data_start..])
            .map_err(|_| Error::Image("non-ASCII data in P2 raster".into()))?;
        let values: Vec<usize> = text
            .split_whitespace()
            .take(count)
            .map(|t| t.parse().map_err(|_| Error::Image(format!("bad P2 sample {t:?}"))))
            .collect::<Result<_>>()?;
        if values.len() < count {
            return Err(Error::Image(format!("truncated raster: {} of {count} samples", values.len())));
        }
        values
    };
    if let Some(v) = raw.iter().find(|&&v| v > h.maxval) {
        return Err(Error::Image(format!("sample {v} exceeds maxval {}", h.maxval)));
    }
    let scale = 255.0 / h.maxval as f64;
    let pixels = raw
        .into_iter()
        .map(|v| if h.maxval == 255 { v as f64 } else { (v as f64 * scale).round() })
        .collect();
    GrayImage::new(h.height, h.width, pixels)
}

fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round_ties_even() as u8
}

/// Encodes with `maxval = 255`; pixels are clamped to [0, 255] and rounded half to even.
pub fn encode_pgm(img: &GrayImage, encoding: PgmEncoding) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    match encoding {
        PgmEncoding::Binary => {
            let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
            out.extend(img.pixels().iter().map(|&v| quantize(v)));
            out
        }
        PgmEncoding::Ascii => {
            let mut out = format!("P2\n{w} {h}\n255\n");
            for row in img.pixels().chunks(w) {
                let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            out.into_bytes()
        }
    }
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    decode_pgm(&fs::read(path)?)
}

/// Writes a binary (P5) PGM.
pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(img, PgmEncoding::Binary))?;
    Ok(())
}
