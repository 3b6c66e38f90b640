//! Binary PGM image files and CSV export.
//!
//! PGM "P5" files with maxval 255 (8 bit) or 65535 (big-endian 16 bit) map
//! linearly to `[0, 1]` on read; writing clamps to `[0, 1]` and quantizes.
//! CSV files carry a header row, comma separators and `.` as the decimal
//! separator.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Quantization depth for PGM output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

/// Reads a binary (P5) PGM file into an image with intensities in `[0, 1]`.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = fs::read(path.as_ref())?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| bad("missing magic number"))?;
    if magic != b"P5" {
        return Err(bad("only binary PGM (P5) is supported"));
    }
    let width: usize = parse_int(next_token(bytes, &mut pos))?;
    let height: usize = parse_int(next_token(bytes, &mut pos))?;
    let maxval: u32 = parse_int(next_token(bytes, &mut pos))? as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval must be in 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if maxval < 256 {
        let raster = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated raster"))?;
        raster.iter().map(|&b| b as f64 * scale).collect()
    } else {
        let raster = bytes
            .get(pos..pos + 2 * n)
            .ok_or_else(|| bad("truncated raster"))?;
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Image::new(height, width, data)
}

fn bad(msg: &str) -> Error {
    Error::Format(format!("pgm: {msg}"))
}

fn parse_int(tok: Option<&[u8]>) -> Result<usize> {
    let tok = tok.ok_or_else(|| bad("truncated header"))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("invalid header integer"))
}

/// Returns the next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(&bytes[start..*pos])
}

/// Writes a binary PGM, clamping intensities into `[0, 1]` and quantizing to
/// the requested depth.
pub fn write_pgm(path: impl AsRef<Path>, img: &Image, depth: PgmDepth) -> Result<()> {
    let bytes = encode_pgm(img, depth);
    fs::write(path.as_ref(), bytes)?;
    Ok(())
}

pub fn encode_pgm(img: &Image, depth: PgmDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

/// Writes a CSV file with a header row; values use `.` as decimal separator.
pub fn write_csv(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut file = fs::File::create(path.as_ref())?;
    writeln!(file, "{}", header.join(","))?;
    for row in rows {
        let line = row
            .iter()
            .map(|v| format_f64(*v))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Shortest decimal representation that round-trips the value.
pub fn format_f64(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v}")
}
