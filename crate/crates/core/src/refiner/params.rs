//! Refinement network parameters and their binary file format.
//!
//! File layout, all integers `u32` little-endian:
//! magic `SFRP`, version, layer count, then `(out, in, kh, kw)` per layer,
//! then for each layer its weights followed by its bias as `f32` LE.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{ConvLayer, KERNEL};
use super::{INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SFRP";
const VERSION: u32 = 1;

pub const DEFAULT_WIDTH: usize = 32;
/// Hidden width of the full-size network.
pub const FULL_WIDTH: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct RefinerParams {
    pub layers: Vec<ConvLayer>,
}

impl RefinerParams {
    /// Every weight and bias zero.
    pub fn zeros(width: usize) -> Self {
        Self {
            layers: vec![
                ConvLayer::zeros(INPUT_CHANNELS, width),
                ConvLayer::zeros(width, width),
                ConvLayer::zeros(width, OUTPUT_CHANNELS),
            ],
        }
    }

    /// He-uniform weights (`±sqrt(6 / fan_in)`), zero biases, and a zero
    /// final layer so the untrained network is the identity refinement.
    pub fn init(width: usize, seed: u64) -> Self {
        let mut p = Self::zeros(width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut p.layers[..2] {
            let bound = (6.0 / (layer.in_channels * KERNEL * KERNEL) as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    pub fn width(&self) -> usize {
        self.layers[0].out_channels
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.in_channels, l.out_channels))
                .collect(),
        }
    }

    /// Weight and bias buffers in file order.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            for d in [l.out_channels, l.in_channels, KERNEL, KERNEL] {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
        }
        for t in self.tensors() {
            for &v in t {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 16 * self.layers.len() + 4 * self.param_count());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason);
        let mut r = bytes;
        let mut word = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            Ok(u32::from_le_bytes(b))
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(bad("not a refiner parameter file (bad magic)"));
        }
        word()?;
        let version = word()?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = word()? as usize;
        if count != 3 {
            return Err(bad(&format!("expected 3 layers, found {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (out, inp, kh, kw) = (word()? as usize, word()? as usize, word()? as usize, word()? as usize);
            if kh != KERNEL || kw != KERNEL {
                return Err(bad(&format!("kernel must be 3x3, found {kh}x{kw}")));
            }
            layers.push(ConvLayer::zeros(inp, out));
        }
        let mut p = RefinerParams { layers };
        let w = p.width();
        let shapes_ok = p.layers[0].in_channels == INPUT_CHANNELS
            && p.layers[1].in_channels == w
            && p.layers[1].out_channels == w
            && p.layers[2].in_channels == w
            && p.layers[2].out_channels == OUTPUT_CHANNELS;
        if !shapes_ok {
            return Err(bad("layer shapes do not form an 11 -> w -> w -> 5 network"));
        }
        let header = 12 + 16 * count;
        let expected = header + 4 * p.param_count();
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut values = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = values.next().expect("length checked");
            }
        }
        if !p.is_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(p)
    }
}
