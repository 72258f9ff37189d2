//! PNG rasters: KITTI 16-bit disparity and flow encodings, 8-bit images and
//! binary masks.
//!
//! KITTI disparity is 16-bit grayscale holding `d · 256` (0 means invalid).
//! KITTI flow is 16-bit RGB holding `u · 64 + 2^15`, `v · 64 + 2^15` and a
//! validity flag.

use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::fields::{ImageField, Mask};

const FLOW_OFFSET: f64 = 32768.0;
const FLOW_SCALE: f64 = 64.0;
const DISP_SCALE: f64 = 256.0;

struct Raster {
    width: usize,
    height: usize,
    depth: BitDepth,
    color: ColorType,
    /// Samples, channel-interleaved, widened to u16.
    samples: Vec<u16>,
}

impl Raster {
    fn channels(&self) -> usize {
        self.color.samples()
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let mut decoder = Decoder::new(bytes);
    decoder.set_transformations(Transformations::IDENTITY);
    let bad = |e: png::DecodingError| Error::format(path, format!("invalid PNG: {e}"));
    let mut reader = decoder.read_info().map_err(bad)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(info.buffer_size());
    let samples = match info.bit_depth {
        BitDepth::Eight => buf.iter().map(|&b| b as u16).collect(),
        BitDepth::Sixteen => buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        d => return Err(Error::format(path, format!("unsupported PNG bit depth {d:?}"))),
    };
    Ok(Raster {
        width: info.width as usize,
        height: info.height as usize,
        depth: info.bit_depth,
        color: info.color_type,
        samples,
    })
}

fn encode(w: usize, h: usize, color: ColorType, depth: BitDepth, samples: &[u16], path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let bad = |e: png::EncodingError| Error::format(path, format!("PNG encoding failed: {e}"));
    {
        let mut enc = Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(bad)?;
        let data: Vec<u8> = match depth {
            BitDepth::Sixteen => samples.iter().flat_map(|s| s.to_be_bytes()).collect(),
            _ => samples.iter().map(|&s| s as u8).collect(),
        };
        writer.write_image_data(&data).map_err(bad)?;
        writer.finish().map_err(bad)?;
    }
    Ok(out)
}

fn read_raster(path: &Path) -> Result<Raster> {
    decode(&read_bytes(path)?, path)
}

fn require(r: &Raster, depth: BitDepth, color: ColorType, what: &str, path: &Path) -> Result<()> {
    if r.depth != depth {
        return Err(Error::format(path, format!("{what} must be {depth:?}-bit, found {:?}", r.depth)));
    }
    if r.color != color {
        return Err(Error::format(path, format!("{what} must be {color:?}, found {:?}", r.color)));
    }
    Ok(())
}

/// Disparity in pixels and its validity mask.
pub fn read_kitti_disp_png(path: impl AsRef<Path>) -> Result<(ImageField, Mask)> {
    let path = path.as_ref();
    let r = read_raster(path)?;
    require(&r, BitDepth::Sixteen, ColorType::Grayscale, "KITTI disparity", path)?;
    let d = r.samples.iter().map(|&s| s as f64 / DISP_SCALE).collect();
    let valid = r.samples.iter().map(|&s| s != 0).collect();
    Ok((ImageField::from_vec(r.width, r.height, 1, d)?, Mask::from_vec(r.width, r.height, valid)?))
}

/// Invalid pixels are stored as 0; values are rounded to 1/256 px.
pub fn write_kitti_disp_png(path: impl AsRef<Path>, disp: &ImageField, valid: &Mask) -> Result<()> {
    let path = path.as_ref();
    disp.ensure_channels(1)?;
    check_mask(valid, disp, path)?;
    let samples: Vec<u16> = disp
        .data()
        .iter()
        .zip(valid.data())
        .map(|(&d, &v)| if v { (d * DISP_SCALE).round().clamp(0.0, 65535.0) as u16 } else { 0 })
        .collect();
    let bytes = encode(disp.width(), disp.height(), ColorType::Grayscale, BitDepth::Sixteen, &samples, path)?;
    write_atomic(path, &bytes)
}

/// Flow `(u, v)` in pixels and its validity mask; invalid pixels read as zero flow.
pub fn read_kitti_flow_png(path: impl AsRef<Path>) -> Result<(ImageField, Mask)> {
    let path = path.as_ref();
    let r = read_raster(path)?;
    require(&r, BitDepth::Sixteen, ColorType::Rgb, "KITTI flow", path)?;
    let n = r.width * r.height;
    let mut flow = ImageField::zeros(r.width, r.height, 2);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let px = &r.samples[3 * i..3 * i + 3];
        let ok = px[2] != 0;
        if ok {
            flow.plane_mut(0)[i] = (px[0] as f64 - FLOW_OFFSET) / FLOW_SCALE;
            flow.plane_mut(1)[i] = (px[1] as f64 - FLOW_OFFSET) / FLOW_SCALE;
        }
        valid.push(ok);
    }
    Ok((flow, Mask::from_vec(r.width, r.height, valid)?))
}

/// Values are rounded to 1/64 px and saturate at ±512 px.
pub fn write_kitti_flow_png(path: impl AsRef<Path>, flow: &ImageField, valid: &Mask) -> Result<()> {
    let path = path.as_ref();
    flow.ensure_channels(2)?;
    check_mask(valid, flow, path)?;
    let enc = |v: f64| (v * FLOW_SCALE + FLOW_OFFSET).round().clamp(0.0, 65535.0) as u16;
    let mut samples = Vec::with_capacity(3 * flow.pixel_count());
    for (i, &ok) in valid.data().iter().enumerate() {
        if ok {
            samples.extend([enc(flow.plane(0)[i]), enc(flow.plane(1)[i]), 1]);
        } else {
            samples.extend([0, 0, 0]);
        }
    }
    let bytes = encode(flow.width(), flow.height(), ColorType::Rgb, BitDepth::Sixteen, &samples, path)?;
    write_atomic(path, &bytes)
}

/// Grayscale or RGB image scaled into `[0, 1]` (8-bit divides by 255,
/// 16-bit by 65535). Alpha is dropped.
pub fn read_image_png(path: impl AsRef<Path>) -> Result<ImageField> {
    let path = path.as_ref();
    let r = read_raster(path)?;
    let max = if r.depth == BitDepth::Sixteen { 65535.0 } else { 255.0 };
    let keep = match r.color {
        ColorType::Grayscale | ColorType::GrayscaleAlpha => 1,
        ColorType::Rgb | ColorType::Rgba => 3,
        ColorType::Indexed => return Err(Error::format(path, "indexed PNG images are not supported")),
    };
    let stride = r.channels();
    let mut img = ImageField::zeros(r.width, r.height, keep);
    for i in 0..r.width * r.height {
        for c in 0..keep {
            img.plane_mut(c)[i] = r.samples[i * stride + c] as f64 / max;
        }
    }
    Ok(img)
}

/// 8-bit grayscale mask, nonzero meaning set.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let r = read_raster(path)?;
    require(&r, BitDepth::Eight, ColorType::Grayscale, "mask", path)?;
    Mask::from_vec(r.width, r.height, r.samples.iter().map(|&s| s != 0).collect())
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let samples: Vec<u16> = mask.data().iter().map(|&m| if m { 255 } else { 0 }).collect();
    let bytes = encode(mask.width(), mask.height(), ColorType::Grayscale, BitDepth::Eight, &samples, path)?;
    write_atomic(path, &bytes)
}

/// 8-bit grayscale or RGB image from values in `[0, 1]`.
pub fn write_image_png(path: impl AsRef<Path>, img: &ImageField) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => return Err(Error::format(path, format!("PNG images hold 1 or 3 channels, field has {c}"))),
    };
    let mut samples = Vec::with_capacity(img.data().len());
    for i in 0..img.pixel_count() {
        for c in 0..img.channels() {
            samples.push((img.plane(c)[i].clamp(0.0, 1.0) * 255.0).round() as u16);
        }
    }
    let bytes = encode(img.width(), img.height(), color, BitDepth::Eight, &samples, path)?;
    write_atomic(path, &bytes)
}

fn check_mask(mask: &Mask, field: &ImageField, path: &Path) -> Result<()> {
    if mask.extent() != field.extent() {
        return Err(Error::format(path, "validity mask extent differs from the field"));
    }
    Ok(())
}
