//! Binary PPM (P6, 8-bit RGB) and PGM (P5, 8- or 16-bit big-endian grey).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_pgm16(width: usize, height: usize, values: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.extend(values.iter().flat_map(|v| v.to_be_bytes()));
    out
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    write_bytes(path, &encode_ppm(width, height, rgb))
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    write_bytes(path, &encode_pgm16(width, height, values))
}

/// Decoded netpbm raster; `samples` holds one value per channel per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub max_value: u16,
    pub samples: Vec<u16>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok().filter(|s| !s.is_empty())
    }

    fn number(&mut self) -> Option<usize> {
        self.token()?.parse().ok()
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Raster> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut h = Header { bytes, pos: 0 };
    let channels = match h.token() {
        Some("P6") => 3,
        Some("P5") => 1,
        _ => return Err(bad("not a binary PPM/PGM file")),
    };
    let width = h.number().ok_or_else(|| bad("missing width"))?;
    let height = h.number().ok_or_else(|| bad("missing height"))?;
    let max_value = h.number().ok_or_else(|| bad("missing maxval"))?;
    if max_value == 0 || max_value > 65535 {
        return Err(bad("maxval outside 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = &bytes[(h.pos + 1).min(bytes.len())..];
    let wide = max_value > 255;
    let n = width * height * channels;
    let need = if wide { 2 * n } else { n };
    if data.len() != need {
        return Err(bad(&format!("expected {need} raster bytes, found {}", data.len())));
    }
    let samples: Vec<u16> = if wide {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data.iter().map(|&b| b as u16).collect()
    };
    if samples.iter().any(|&s| s as usize > max_value) {
        return Err(bad("sample exceeds maxval"));
    }
    Ok(Raster {
        width,
        height,
        channels,
        max_value: max_value as u16,
        samples,
    })
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(path, &bytes)
}
