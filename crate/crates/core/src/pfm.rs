//! Portable float map I/O for single heatmap planes.
//!
//! Planes are written as grayscale (`Pf`) little-endian maps, bottom row
//! first as the format requires. Colour (`PF`) maps are read by averaging the
//! three channels.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A single plane, row-major from the top row.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

pub fn encode(width: usize, height: usize, data: &[f64]) -> Result<Vec<u8>> {
    if data.len() != width * height {
        return Err(Error::Pfm(format!(
            "plane has {} values, expected {width}x{height}",
            data.len()
        )));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(4 * data.len());
    for y in (0..height).rev() {
        for v in &data[y * width..(y + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, width: usize, height: usize, data: &[f64]) -> Result<()> {
    let bytes = encode(width, height, data)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// Splits off the next whitespace-delimited header token.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Pfm("truncated header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Pfm("non-ascii header".into()))
}

pub fn decode(bytes: &[u8]) -> Result<Plane> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Pfm(format!("bad magic `{other}`"))),
    };
    let parse_dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Pfm(format!("bad dimension `{s}`")))
    };
    let width = parse_dim(token(bytes, &mut pos)?)?;
    let height = parse_dim(token(bytes, &mut pos)?)?;
    let scale: f64 = token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::Pfm("bad scale".into()))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Pfm("scale must be non-zero".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let little = scale < 0.0;
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + 4 * n)
        .ok_or_else(|| Error::Pfm(format!("expected {} raster bytes, found {}", 4 * n, bytes.len().saturating_sub(pos))))?;
    let values: Vec<f64> = raster
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            f64::from(if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) })
        })
        .collect();
    let mut data = vec![0.0; width * height];
    for (row_from_bottom, row) in values.chunks_exact(width * channels).enumerate() {
        let y = height - 1 - row_from_bottom;
        for x in 0..width {
            let px = &row[x * channels..(x + 1) * channels];
            data[y * width + x] = px.iter().sum::<f64>() / channels as f64;
        }
    }
    Ok(Plane { width, height, data })
}

pub fn read(path: impl AsRef<Path>) -> Result<Plane> {
    decode(&std::fs::read(path)?)
}
