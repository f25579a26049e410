//! Netpbm grey-map input/output plus plain CSV vector export.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse(msg.into()))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return parse_err(format!("expected {what} at byte {start}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("invalid {what}")))
    }
}

/// Decodes a P5 (binary) or P2 (ASCII) grey map with maxval ≤ 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'5' || bytes[1] == b'2') {
        return parse_err("missing P5/P2 magic");
    }
    let binary = bytes[1] == b'5';
    let mut h = Header { bytes, pos: 2 };
    let nx = h.next_uint("width")?;
    let ny = h.next_uint("height")?;
    let maxval = h.next_uint("maxval")?;
    if nx == 0 || ny == 0 {
        return parse_err("zero image dimension");
    }
    if maxval == 0 || maxval > 255 {
        return parse_err(format!("unsupported maxval {maxval}"));
    }
    let n = nx
        .checked_mul(ny)
        .ok_or_else(|| Error::Parse("image dimensions overflow".into()))?;
    let mut data = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
            return parse_err("truncated header");
        }
        let start = h.pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| Error::Parse(format!("raster truncated: need {n} bytes")))?;
        data.extend(raster.iter().map(|&b| f64::from(b)));
    } else {
        for k in 0..n {
            let v = h.next_uint("grey value").map_err(|_| {
                Error::Parse(format!("raster truncated after {k} of {n} values"))
            })?;
            if v > maxval {
                return parse_err(format!("grey value {v} exceeds maxval {maxval}"));
            }
            data.push(v as f64);
        }
    }
    Image::new(nx, ny, data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes)
}

/// Encodes an 8-bit raster as binary P5.
pub fn encode_raster(nx: usize, ny: usize, raster: &[u8]) -> Vec<u8> {
    assert_eq!(raster.len(), nx * ny);
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    out.extend_from_slice(raster);
    out
}

/// Rounds and clamps grey values to `[0, 255]` and encodes as P5.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let raster: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    encode_raster(img.nx(), img.ny(), &raster)
}

pub fn write_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn write_raster_pgm(nx: usize, ny: usize, raster: &[u8], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_raster(nx, ny, raster))?;
    Ok(())
}

/// Binary P6 colour image from interleaved RGB bytes.
pub fn write_ppm(nx: usize, ny: usize, rgb: &[u8], path: impl AsRef<Path>) -> Result<()> {
    assert_eq!(rgb.len(), 3 * nx * ny);
    let mut out = format!("P6\n{nx} {ny}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out)?;
    Ok(())
}

/// One value per line, full round-trip precision.
pub fn write_csv(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for v in values {
        writeln!(file, "{v:?}")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad CSV value {l:?}: {e}")))
        })
        .collect()
}
