//! Portable Float Map: `Pf` (one channel) or `PF` (three channels), a
//! dimension line, a scale whose sign gives the byte order (negative is
//! little-endian), then rows from bottom to top.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::fields::ImageField;

/// Reads a single-channel map; a `PF` file is rejected.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageField> {
    let path = path.as_ref();
    let field = read_pfm_any(path)?;
    if field.channels() != 1 {
        return Err(Error::format(path, "expected a single-channel `Pf` map, found `PF`"));
    }
    Ok(field)
}

/// Reads either a `Pf` or a `PF` map.
pub fn read_pfm_any(path: impl AsRef<Path>) -> Result<ImageField> {
    let path = path.as_ref();
    decode(&read_bytes(path)?, path)
}

pub fn write_pfm(path: impl AsRef<Path>, field: &ImageField) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode(field, path)?)
}

/// Splits off the next whitespace-delimited header token.
fn token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, "truncated PFM header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::format(path, "malformed PFM header"))
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<ImageField> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos, path)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::format(path, format!("bad PFM magic `{other}`"))),
    };
    let dim = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::format(path, format!("bad PFM dimension `{s}`")))
    };
    let w = dim(token(bytes, &mut pos, path)?)?;
    let h = dim(token(bytes, &mut pos, path)?)?;
    let scale: f64 = token(bytes, &mut pos, path)?
        .parse()
        .map_err(|_| Error::format(path, "bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, "PFM scale must be non-zero"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "truncated PFM header"));
    }
    pos += 1;
    let little = scale < 0.0;
    let payload = &bytes[pos..];
    let expected = w * h * channels * 4;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} payload bytes for {w}x{h}x{channels}, found {}", payload.len()),
        ));
    }
    let mut field = ImageField::zeros(w, h, channels);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        if !v.is_finite() {
            return Err(Error::format(path, "non-finite value in PFM payload"));
        }
        let c = k % channels;
        let px = k / channels;
        let (x, file_row) = (px % w, px / w);
        field.set(c, x, h - 1 - file_row, v as f64);
    }
    Ok(field)
}

pub(crate) fn encode(field: &ImageField, path: &Path) -> Result<Vec<u8>> {
    let magic = match field.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::format(path, format!("PFM holds 1 or 3 channels, field has {c}"))),
    };
    let (w, h) = field.extent();
    let mut out = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * field.channels() * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            for c in 0..field.channels() {
                out.extend_from_slice(&(field.get(c, x, y) as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}
