//! Middlebury `.flo`: float magic `202021.25`, width and height as `i32`,
//! then interleaved `(u, v)` `f32` values row by row, all little-endian.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::fields::ImageField;

const MAGIC: f32 = 202021.25;

pub fn read_flo(path: impl AsRef<Path>) -> Result<ImageField> {
    let path = path.as_ref();
    decode(&read_bytes(path)?, path)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &ImageField) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode(flow, path)?)
}

fn word(bytes: &[u8], k: usize) -> [u8; 4] {
    [bytes[4 * k], bytes[4 * k + 1], bytes[4 * k + 2], bytes[4 * k + 3]]
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<ImageField> {
    if bytes.len() < 12 {
        return Err(Error::format(path, "truncated .flo header"));
    }
    if f32::from_le_bytes(word(bytes, 0)) != MAGIC {
        return Err(Error::format(path, "bad .flo magic (expected 202021.25)"));
    }
    let w = i32::from_le_bytes(word(bytes, 1));
    let h = i32::from_le_bytes(word(bytes, 2));
    if w <= 0 || h <= 0 {
        return Err(Error::format(path, format!("bad .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + w * h * 8;
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes for {w}x{h}, found {}", bytes.len())));
    }
    let mut flow = ImageField::zeros(w, h, 2);
    for i in 0..w * h {
        for c in 0..2 {
            let v = f32::from_le_bytes(word(bytes, 3 + 2 * i + c));
            if !v.is_finite() {
                return Err(Error::format(path, "non-finite value in .flo payload"));
            }
            flow.plane_mut(c)[i] = v as f64;
        }
    }
    Ok(flow)
}

pub(crate) fn encode(flow: &ImageField, path: &Path) -> Result<Vec<u8>> {
    if flow.channels() != 2 {
        return Err(Error::format(path, format!(".flo holds 2 channels, field has {}", flow.channels())));
    }
    let (w, h) = flow.extent();
    let mut out = Vec::with_capacity(12 + w * h * 8);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    let (u, v) = (flow.plane(0), flow.plane(1));
    for i in 0..w * h {
        out.extend_from_slice(&(u[i] as f32).to_le_bytes());
        out.extend_from_slice(&(v[i] as f32).to_le_bytes());
    }
    Ok(out)
}
