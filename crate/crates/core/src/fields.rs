//! Raster and scene-flow value types shared by every other module.
//!
//! All rasters are row-major and channel-planar: sample `(c, x, y)` lives at
//! `data[c * width * height + y * width + x]`.

use crate::error::{Error, Result};

/// Number of channels a packed [`SceneFlowState`] occupies.
pub const STATE_CHANNELS: usize = 5;

/// Channel indices of the packed state, in packing order.
pub const CH_D1: usize = 0;
pub const CH_D2: usize = 1;
pub const CH_FLOW_X: usize = 2;
pub const CH_FLOW_Y: usize = 3;
pub const CH_DCHANGE: usize = 4;

/// Dense multi-channel raster of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageField {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageField {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::InvalidField(format!(
                "{}x{}x{} field needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value {bad}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a field from a per-pixel function `f(channel, x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Stacks single-plane slices into one field.
    pub fn from_planes(width: usize, height: usize, planes: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * planes.len());
        for p in planes {
            if p.len() != width * height {
                return Err(Error::InvalidField(format!(
                    "plane of {} values does not fit {}x{}",
                    p.len(),
                    width,
                    height
                )));
            }
            data.extend_from_slice(p);
        }
        Self::from_vec(width, height, planes.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Copies channel `c` into a new single-channel field.
    pub fn channel_field(&self, c: usize) -> ImageField {
        ImageField {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageField {
        ImageField {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    pub fn ensure_extent(&self, extent: (usize, usize)) -> Result<()> {
        if self.extent() != extent {
            return Err(Error::ExtentMismatch {
                expected: extent,
                got: self.extent(),
            });
        }
        Ok(())
    }

    pub fn ensure_channels(&self, channels: usize) -> Result<()> {
        if self.channels != channels {
            return Err(Error::ChannelMismatch {
                expected: channels,
                got: self.channels,
            });
        }
        Ok(())
    }

    /// Concatenates fields of one extent along the channel axis.
    pub fn concat(fields: &[&ImageField]) -> Result<ImageField> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidField("nothing to concatenate".into()))?;
        let extent = first.extent();
        let mut data = Vec::new();
        let mut channels = 0;
        for f in fields {
            f.ensure_extent(extent)?;
            data.extend_from_slice(&f.data);
            channels += f.channels;
        }
        Ok(ImageField {
            width: extent.0,
            height: extent.1,
            channels,
            data,
        })
    }
}

/// Binary per-pixel map. Used both for the forward-backward occlusion check
/// (1 = consistent, visible) and for generic validity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

pub type OcclusionMask = Mask;

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidField(format!(
                "{}x{} mask needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn to_field(&self) -> ImageField {
        ImageField {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Scene flow between two stereo frames: disparity in both frames, forward
/// optical flow of the left view, and per-pixel disparity change.
///
/// `d2` is expressed in the second frame's own pixel grid; `d1`, `flow` and
/// `dchange` live on the first frame's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFlowState {
    pub d1: ImageField,
    pub d2: ImageField,
    pub flow: ImageField,
    pub dchange: ImageField,
}

impl SceneFlowState {
    pub fn new(d1: ImageField, d2: ImageField, flow: ImageField, dchange: ImageField) -> Result<Self> {
        d1.ensure_channels(1)?;
        d2.ensure_channels(1)?;
        flow.ensure_channels(2)?;
        dchange.ensure_channels(1)?;
        let extent = d1.extent();
        d2.ensure_extent(extent)?;
        flow.ensure_extent(extent)?;
        dchange.ensure_extent(extent)?;
        let mut state = Self {
            d1,
            d2,
            flow,
            dchange,
        };
        state.clamp_disparities();
        Ok(state)
    }

    /// Constant state, handy for tests and examples.
    pub fn constant(width: usize, height: usize, d1: f64, d2: f64, flow: (f64, f64), dchange: f64) -> Self {
        let mut flow_field = ImageField::zeros(width, height, 2);
        flow_field.plane_mut(0).fill(flow.0);
        flow_field.plane_mut(1).fill(flow.1);
        Self {
            d1: ImageField::filled(width, height, 1, d1.max(0.0)),
            d2: ImageField::filled(width, height, 1, d2.max(0.0)),
            flow: flow_field,
            dchange: ImageField::filled(width, height, 1, dchange),
        }
    }

    pub fn extent(&self) -> (usize, usize) {
        self.d1.extent()
    }

    pub fn width(&self) -> usize {
        self.d1.width()
    }

    pub fn height(&self) -> usize {
        self.d1.height()
    }

    pub fn clamp_disparities(&mut self) {
        for v in self.d1.data_mut().iter_mut().chain(self.d2.data_mut()) {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Packs into a 5-channel field ordered `[d1, d2, F_x, F_y, dchange]`.
    pub fn pack(&self) -> ImageField {
        pack_state(self)
    }
}

pub fn pack_state(state: &SceneFlowState) -> ImageField {
    ImageField::concat(&[&state.d1, &state.d2, &state.flow, &state.dchange])
        .expect("scene flow state fields share one extent")
}

/// Inverse of [`pack_state`]. Negative disparities are clamped to zero.
pub fn unpack_state(field: &ImageField) -> Result<SceneFlowState> {
    field.ensure_channels(STATE_CHANNELS).map_err(|_| {
        Error::InvalidField(format!(
            "a scene flow state packs into {STATE_CHANNELS} channels, field has {}",
            field.channels()
        ))
    })?;
    let (w, h) = field.extent();
    let d1 = field.channel_field(CH_D1);
    let d2 = field.channel_field(CH_D2);
    let flow = ImageField::from_planes(w, h, &[field.plane(CH_FLOW_X), field.plane(CH_FLOW_Y)])?;
    let dchange = field.channel_field(CH_DCHANGE);
    SceneFlowState::new(d1, d2, flow, dchange)
}

/// `∂L/∂X` laid out exactly like a packed [`SceneFlowState`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField(ImageField);

impl GradientField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self(ImageField::zeros(width, height, STATE_CHANNELS))
    }

    pub fn from_field(field: ImageField) -> Result<Self> {
        field.ensure_channels(STATE_CHANNELS)?;
        Ok(Self(field))
    }

    pub fn as_field(&self) -> &ImageField {
        &self.0
    }

    pub fn into_field(self) -> ImageField {
        self.0
    }

    pub fn extent(&self) -> (usize, usize) {
        self.0.extent()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        self.0.plane(c)
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        self.0.plane_mut(c)
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.0.data_mut()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean_abs(&self) -> f64 {
        let d = self.0.data();
        d.iter().map(|v| v.abs()).sum::<f64>() / d.len().max(1) as f64
    }

    /// In-place `self += k * other`.
    pub fn add_scaled(&mut self, other: &GradientField, k: f64) {
        for (a, b) in self.0.data_mut().iter_mut().zip(other.0.data()) {
            *a += k * b;
        }
    }
}

/// Two temporally adjacent rectified stereo pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoClip {
    pub l1: ImageField,
    pub r1: ImageField,
    pub l2: ImageField,
    pub r2: ImageField,
    /// Flow from the second left frame back to the first.
    pub backward_flow: Option<ImageField>,
}

impl StereoClip {
    pub fn new(l1: ImageField, r1: ImageField, l2: ImageField, r2: ImageField) -> Result<Self> {
        let extent = l1.extent();
        let channels = l1.channels();
        for img in [&r1, &l2, &r2] {
            img.ensure_extent(extent)?;
            img.ensure_channels(channels)?;
        }
        if extent.0 == 0 || extent.1 == 0 {
            return Err(Error::InvalidField("clip images are empty".into()));
        }
        Ok(Self {
            l1,
            r1,
            l2,
            r2,
            backward_flow: None,
        })
    }

    pub fn with_backward_flow(mut self, flow: ImageField) -> Result<Self> {
        flow.ensure_channels(2)?;
        flow.ensure_extent(self.extent())?;
        self.backward_flow = Some(flow);
        Ok(self)
    }

    pub fn extent(&self) -> (usize, usize) {
        self.l1.extent()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_constant_state() {
        let s = SceneFlowState::constant(4, 3, 3.0, 3.0, (0.0, 0.0), 0.0);
        let f = pack_state(&s);
        assert_eq!(f.channels(), 5);
        assert!(f.plane(0).iter().all(|&v| v == 3.0));
        for c in 2..5 {
            assert!(f.plane(c).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pack_layout_is_row_major() {
        let d1 = ImageField::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = SceneFlowState::new(
            d1,
            ImageField::zeros(2, 2, 1),
            ImageField::zeros(2, 2, 2),
            ImageField::zeros(2, 2, 1),
        )
        .unwrap();
        assert_eq!(pack_state(&s).plane(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unpack_inverts_pack() {
        let s = SceneFlowState::new(
            ImageField::from_fn(3, 2, 1, |_, x, y| (x + y) as f64),
            ImageField::from_fn(3, 2, 1, |_, x, _| x as f64 * 0.5),
            ImageField::from_fn(3, 2, 2, |c, x, y| c as f64 - x as f64 + 0.25 * y as f64),
            ImageField::from_fn(3, 2, 1, |_, x, _| -(x as f64)),
        )
        .unwrap();
        assert_eq!(unpack_state(&pack_state(&s)).unwrap(), s);
    }

    #[test]
    fn unpack_clamps_negative_disparity() {
        let mut f = ImageField::zeros(2, 1, 5);
        f.set(CH_D1, 0, 0, -0.5);
        f.set(CH_DCHANGE, 1, 0, -0.5);
        let s = unpack_state(&f).unwrap();
        assert_eq!(s.d1.get(0, 0, 0), 0.0);
        assert_eq!(s.dchange.get(0, 1, 0), -0.5);
    }

    #[test]
    fn unpack_rejects_wrong_channel_count() {
        let err = unpack_state(&ImageField::zeros(2, 2, 4)).unwrap_err();
        assert!(err.to_string().contains("5 channels"));
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(ImageField::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn clip_requires_matching_extents() {
        let a = ImageField::zeros(4, 4, 1);
        let b = ImageField::zeros(4, 3, 1);
        assert!(StereoClip::new(a.clone(), a.clone(), a.clone(), b).is_err());
        let clip = StereoClip::new(a.clone(), a.clone(), a.clone(), a).unwrap();
        assert!(clip.with_backward_flow(ImageField::zeros(4, 4, 1)).is_err());
    }
}
