//! Procedural stereo-video scenes with exact ground truth.
//!
//! A scene is a stack of textured planar layers. Each layer has a disparity
//! plane `a x + b y + c` in first-frame left-view coordinates, a lateral image
//! shift and a constant disparity change between frames. Rendering is an
//! analytic z-buffer (largest disparity wins) evaluated at pixel centres, so
//! every ground-truth channel is closed-form.
//!
//! Textures are sums of a few sinusoids whose amplitudes are scaled so that
//! `Σ A ω² <= 6e-3`, which bounds the bilinear resampling error of a texture
//! by `6e-3 / 8 < 1e-3`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{ImageField, Mask, OcclusionMask, SceneFlowState, StereoClip};
use crate::warp::Footprint;

/// Largest `Σ A ω²` a texture may carry.
pub const TEXTURE_CURVATURE_BUDGET: f64 = 6e-3;
const TEXTURE_AMPLITUDE_BUDGET: f64 = 0.3;
const TEXTURE_WAVES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisparityPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl DisparityPlane {
    pub fn constant(c: f64) -> Self {
        Self { a: 0.0, b: 0.0, c }
    }

    #[inline]
    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerMotion {
    pub shift_x: f64,
    pub shift_y: f64,
    /// Disparity change between the two frames.
    pub ddisp: f64,
}

impl LayerMotion {
    pub const STILL: LayerMotion = LayerMotion {
        shift_x: 0.0,
        shift_y: 0.0,
        ddisp: 0.0,
    };
}

/// Support of a layer in its own (first-frame left-view) coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerShape {
    Full,
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl LayerShape {
    #[inline]
    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            LayerShape::Full => true,
            LayerShape::Rect { x0, y0, x1, y1 } => u >= x0 && u < x1 && v >= y0 && v < y1,
            LayerShape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((u - cx) / rx, (v - cy) / ry);
                dx * dx + dy * dy < 1.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureSpec {
    pub seed: u64,
    pub min_wavelength: f64,
    pub max_wavelength: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub disparity: DisparityPlane,
    pub motion: LayerMotion,
    pub shape: LayerShape,
    pub texture: TextureSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Layer,
    /// Foreground layers, back to front.
    pub layers: Vec<Layer>,
    /// Standard deviation of additive image noise.
    pub noise_sigma: f64,
}

impl SceneSpec {
    /// One full-frame layer.
    pub fn single_plane(width: usize, height: usize, disparity: DisparityPlane, motion: LayerMotion, texture_seed: u64) -> Self {
        Self {
            width,
            height,
            background: Layer {
                disparity,
                motion,
                shape: LayerShape::Full,
                texture: TextureSpec {
                    seed: texture_seed,
                    min_wavelength: 12.0,
                    max_wavelength: 40.0,
                },
            },
            layers: Vec::new(),
            noise_sigma: 0.0,
        }
    }

    fn all_layers(&self) -> impl Iterator<Item = &Layer> {
        std::iter::once(&self.background).chain(&self.layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::InvalidScene(format!("extent {}x{} too small", self.width, self.height)));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidScene("noise level must be non-negative".into()));
        }
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        for (k, layer) in self.all_layers().enumerate() {
            let p = layer.disparity;
            if p.a >= 0.5 {
                return Err(Error::InvalidScene(format!("layer {k}: disparity x-slope {} >= 0.5", p.a)));
            }
            let t = layer.texture;
            if !(t.min_wavelength >= 2.0 && t.max_wavelength >= t.min_wavelength) {
                return Err(Error::InvalidScene(format!("layer {k}: bad texture wavelength range")));
            }
            let m = layer.motion;
            // the layer is seen over the first-frame image and, shifted, over
            // the second; both domains must have non-negative disparity
            for (x, y) in [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)] {
                let d1 = p.at(x, y);
                let d2 = p.at(x - m.shift_x, y - m.shift_y) + m.ddisp;
                if d1 < 0.0 || d2 < 0.0 {
                    return Err(Error::InvalidScene(format!("layer {k}: negative disparity near ({x}, {y})")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Wave {
    amp: f64,
    kx: f64,
    ky: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
struct Texture {
    base: f64,
    waves: Vec<Wave>,
}

impl Texture {
    fn realize(spec: &TextureSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let base = rng.gen_range(0.3..0.7);
        let mut waves: Vec<Wave> = (0..TEXTURE_WAVES)
            .map(|_| {
                let wavelength = if spec.max_wavelength > spec.min_wavelength {
                    rng.gen_range(spec.min_wavelength..spec.max_wavelength)
                } else {
                    spec.min_wavelength
                };
                let omega = std::f64::consts::TAU / wavelength;
                let theta = rng.gen_range(0.0..std::f64::consts::PI);
                Wave {
                    amp: rng.gen_range(0.5..1.0),
                    kx: omega * theta.cos(),
                    ky: omega * theta.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        let amp_sum: f64 = waves.iter().map(|w| w.amp).sum();
        let curv_sum: f64 = waves.iter().map(|w| w.amp * (w.kx * w.kx + w.ky * w.ky)).sum();
        let scale = (TEXTURE_AMPLITUDE_BUDGET / amp_sum).min(TEXTURE_CURVATURE_BUDGET / curv_sum);
        for w in &mut waves {
            w.amp *= scale;
        }
        Texture { base, waves }
    }

    #[inline]
    fn at(&self, u: f64, v: f64) -> f64 {
        self.base + self.waves.iter().map(|w| w.amp * (w.kx * u + w.ky * v + w.phase).sin()).sum::<f64>()
    }
}

/// Which view of which frame a pixel is rendered in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum View {
    Left1,
    Right1,
    Left2,
    Right2,
}

/// The visible surface at a pixel.
#[derive(Clone, Copy, Debug)]
struct Hit {
    layer: usize,
    u: f64,
    v: f64,
    disparity: f64,
}

struct Scene<'a> {
    layers: Vec<&'a Layer>,
    textures: Vec<Texture>,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        let layers: Vec<&Layer> = spec.all_layers().collect();
        let textures = layers.iter().map(|l| Texture::realize(&l.texture)).collect();
        Self { layers, textures }
    }

    /// Z-buffer lookup: largest disparity wins, later layers win ties.
    fn hit(&self, view: View, x: f64, y: f64) -> Hit {
        let mut best: Option<Hit> = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let p = layer.disparity;
            let m = layer.motion;
            let (u, v, ddisp) = match view {
                View::Left1 => (x, y, 0.0),
                View::Right1 => ((x + p.b * y + p.c) / (1.0 - p.a), y, 0.0),
                View::Left2 => (x - m.shift_x, y - m.shift_y, m.ddisp),
                View::Right2 => {
                    let v = y - m.shift_y;
                    ((x - m.shift_x + p.b * v + p.c + m.ddisp) / (1.0 - p.a), v, m.ddisp)
                }
            };
            if !layer.shape.contains(u, v) {
                continue;
            }
            let disparity = p.at(u, v) + ddisp;
            if best.is_none_or(|b| disparity >= b.disparity) {
                best = Some(Hit { layer: k, u, v, disparity });
            }
        }
        best.expect("the background covers every pixel")
    }
}

/// Layer index visible at every pixel of each rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerIds {
    pub l1: Vec<u16>,
    pub r1: Vec<u16>,
    pub l2: Vec<u16>,
    pub r2: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// Rendered views; carries the exact backward flow.
    pub clip: StereoClip,
    pub gt: SceneFlowState,
    /// 1 where the surface seen at `p` is still visible at `p + F(p)` in frame 2.
    pub occlusion: OcclusionMask,
    /// 1 where the surface seen at `p` is visible in the first right view.
    pub stereo_visible: Mask,
    /// Pixels with defined ground truth (all of them, for rendered scenes).
    pub valid: Mask,
    pub layer_ids: LayerIds,
}

impl SyntheticSample {
    pub fn backward_flow(&self) -> &ImageField {
        self.clip.backward_flow.as_ref().expect("synthetic clips carry backward flow")
    }

    fn footprint_single_layer(ids: &[u16], w: usize, h: usize, x: f64, y: f64, layer: u16) -> bool {
        let fp = Footprint::new(w, h, x, y);
        fp.in_bounds && fp.idx.iter().zip(fp.weight).all(|(&i, wt)| wt == 0.0 || ids[i] == layer)
    }

    /// Pixels whose temporal correspondence is visible, in bounds, and whose
    /// bilinear footprint in `L2` lies entirely on the same layer.
    pub fn flow_consistent_mask(&self) -> Mask {
        let (w, h) = self.gt.extent();
        let ids = &self.layer_ids;
        Mask::from_fn(w, h, |x, y| {
            let i = y * w + x;
            let qx = x as f64 + self.gt.flow.plane(0)[i];
            let qy = y as f64 + self.gt.flow.plane(1)[i];
            self.occlusion.get(x, y) && Self::footprint_single_layer(&ids.l2, w, h, qx, qy, ids.l1[i])
        })
    }

    /// Pixels whose stereo correspondence is visible, in bounds, and whose
    /// bilinear footprint in `R1` lies entirely on the same layer.
    pub fn stereo_consistent_mask(&self) -> Mask {
        let (w, h) = self.gt.extent();
        let ids = &self.layer_ids;
        Mask::from_fn(w, h, |x, y| {
            let i = y * w + x;
            let qx = x as f64 - self.gt.d1.plane(0)[i];
            self.stereo_visible.get(x, y) && Self::footprint_single_layer(&ids.r1, w, h, qx, y as f64, ids.l1[i])
        })
    }
}

/// Renders `spec`. `seed` drives the image noise only.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<SyntheticSample> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let scene = Scene::new(spec);

    let mut views: Vec<(ImageField, Vec<u16>, Vec<Hit>)> = Vec::with_capacity(4);
    for view in [View::Left1, View::Right1, View::Left2, View::Right2] {
        let mut img = ImageField::zeros(w, h, 1);
        let mut ids = Vec::with_capacity(w * h);
        let mut hits = Vec::with_capacity(w * h);
        {
            let plane = img.plane_mut(0);
            for y in 0..h {
                for x in 0..w {
                    let hit = scene.hit(view, x as f64, y as f64);
                    plane[y * w + x] = scene.textures[hit.layer].at(hit.u, hit.v);
                    ids.push(hit.layer as u16);
                    hits.push(hit);
                }
            }
        }
        views.push((img, ids, hits));
    }

    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidScene(e.to_string()))?;
        for (img, _, _) in &mut views {
            for v in img.data_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }

    let hits_l1 = &views[0].2;
    let hits_l2 = &views[2].2;
    let d1 = ImageField::from_vec(w, h, 1, hits_l1.iter().map(|hit| hit.disparity).collect())?;
    let d2 = ImageField::from_vec(w, h, 1, hits_l2.iter().map(|hit| hit.disparity).collect())?;
    let mut flow = ImageField::zeros(w, h, 2);
    let mut dchange = ImageField::zeros(w, h, 1);
    let mut bwd = ImageField::zeros(w, h, 2);
    for i in 0..w * h {
        let m = scene.layers[hits_l1[i].layer].motion;
        flow.plane_mut(0)[i] = m.shift_x;
        flow.plane_mut(1)[i] = m.shift_y;
        dchange.data_mut()[i] = m.ddisp;
        let mb = scene.layers[hits_l2[i].layer].motion;
        bwd.plane_mut(0)[i] = -mb.shift_x;
        bwd.plane_mut(1)[i] = -mb.shift_y;
    }

    let occlusion = Mask::from_fn(w, h, |x, y| {
        let hit = hits_l1[y * w + x];
        let m = scene.layers[hit.layer].motion;
        scene.hit(View::Left2, x as f64 + m.shift_x, y as f64 + m.shift_y).layer == hit.layer
    });
    let stereo_visible = Mask::from_fn(w, h, |x, y| {
        let hit = hits_l1[y * w + x];
        scene.hit(View::Right1, x as f64 - hit.disparity, y as f64).layer == hit.layer
    });

    let mut it = views.into_iter();
    let (l1, ids_l1, _) = it.next().unwrap();
    let (r1, ids_r1, _) = it.next().unwrap();
    let (l2, ids_l2, _) = it.next().unwrap();
    let (r2, ids_r2, _) = it.next().unwrap();
    let clip = StereoClip::new(l1, r1, l2, r2)?.with_backward_flow(bwd)?;
    let gt = SceneFlowState::new(d1, d2, flow, dchange)?;
    Ok(SyntheticSample {
        clip,
        gt,
        occlusion,
        stereo_visible,
        valid: Mask::filled(w, h, true),
        layer_ids: LayerIds {
            l1: ids_l1,
            r1: ids_r1,
            l2: ids_l2,
            r2: ids_r2,
        },
    })
}

/// Randomization ranges for [`make_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub disparity_range: (f64, f64),
    pub foreground_layers: (usize, usize),
    /// Largest absolute lateral shift, per axis.
    pub max_shift: (f64, f64),
    pub max_ddisp: f64,
    pub max_slope: f64,
    pub wavelength_range: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            disparity_range: (1.0, 32.0),
            foreground_layers: (1, 3),
            max_shift: (6.0, 3.0),
            max_ddisp: 2.0,
            max_slope: 0.02,
            wavelength_range: (10.0, 40.0),
            noise_sigma: 0.0,
        }
    }
}

impl DatasetConfig {
    pub fn with_size(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    /// Draws one random scene inside the configured ranges.
    pub fn random_scene(&self, rng: &mut impl Rng) -> SceneSpec {
        let (dmin, dmax) = self.disparity_range;
        let (w, h) = (self.width as f64, self.height as f64);
        let n_fg = rng.gen_range(self.foreground_layers.0..=self.foreground_layers.1);
        // base disparities, back to front, leaving headroom for slopes and ddisp
        let margin = self.max_ddisp + self.max_slope * (w + h) + 0.5;
        let lo = dmin + margin;
        let hi = (dmax - margin).max(lo);
        let mut bases: Vec<f64> = (0..=n_fg).map(|_| rng.gen_range(lo..=hi)).collect();
        bases.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let texture = |rng: &mut dyn RngCore| TextureSpec {
            seed: rng.next_u64(),
            min_wavelength: self.wavelength_range.0,
            max_wavelength: self.wavelength_range.1,
        };
        let make_layer = |rng: &mut ChaCha8Rng, base: f64, shape: LayerShape| {
            let a = rng.gen_range(-self.max_slope..=self.max_slope);
            let b = rng.gen_range(-self.max_slope..=self.max_slope);
            // centre the plane so the base disparity holds mid-image
            let plane = DisparityPlane {
                a,
                b,
                c: base - a * w / 2.0 - b * h / 2.0,
            };
            let motion = LayerMotion {
                shift_x: rng.gen_range(-self.max_shift.0..=self.max_shift.0),
                shift_y: rng.gen_range(-self.max_shift.1..=self.max_shift.1),
                ddisp: rng.gen_range(-self.max_ddisp..=self.max_ddisp),
            };
            Layer {
                disparity: plane,
                motion,
                shape,
                texture: texture(rng),
            }
        };
        let mut local = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let background = make_layer(&mut local, bases[0], LayerShape::Full);
        let layers = bases[1..]
            .iter()
            .map(|&base| {
                let cx = local.gen_range(0.15 * w..0.85 * w);
                let cy = local.gen_range(0.15 * h..0.85 * h);
                let rx = local.gen_range(0.12 * w..0.3 * w);
                let ry = local.gen_range(0.12 * h..0.35 * h);
                let shape = if local.gen_bool(0.5) {
                    LayerShape::Ellipse { cx, cy, rx, ry }
                } else {
                    LayerShape::Rect {
                        x0: cx - rx,
                        y0: cy - ry,
                        x1: cx + rx,
                        y1: cy + ry,
                    }
                };
                make_layer(&mut local, base, shape)
            })
            .collect();
        SceneSpec {
            width: self.width,
            height: self.height,
            background,
            layers,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// `n` random scenes, rendered in parallel. Sample `i` depends only on
/// `(seed, i)`, so the first `k` samples of a larger set are identical.
pub fn make_dataset(n: usize, config: &DatasetConfig, seed: u64) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let spec = config.random_scene(&mut rng);
            generate(&spec, rng.next_u64())
        })
        .collect()
}

/// Splits a dataset by index: the first `n_train` samples train, the rest are held out.
pub fn split(mut samples: Vec<SyntheticSample>, n_train: usize) -> (Vec<SyntheticSample>, Vec<SyntheticSample>) {
    let held_out = samples.split_off(n_train.min(samples.len()));
    (samples, held_out)
}
