//! Backward warping with a clamp-to-edge bilinear sampler.
//!
//! Every sample reports whether the query fell inside `[0, W-1] x [0, H-1]`;
//! losses use that flag to zero out border samples. Derivatives are those of
//! the clamped interpolant, taking the right-sided limit on cell boundaries.

use crate::error::Result;
use crate::fields::{ImageField, Mask};

/// Value and partial derivatives of the bilinear interpolant at one query.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    pub value: Vec<f64>,
    pub d_dx: Vec<f64>,
    pub d_dy: Vec<f64>,
    pub in_bounds: bool,
}

#[derive(Clone, Copy, Debug)]
struct Axis {
    i0: usize,
    i1: usize,
    frac: f64,
    /// False where the interpolant is flat along this axis (clamped or 1 px wide).
    active: bool,
}

#[inline]
fn axis(coord: f64, n: usize) -> Axis {
    if n == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            frac: 0.0,
            active: false,
        };
    }
    let last = (n - 1) as f64;
    if coord < 0.0 {
        Axis {
            i0: 0,
            i1: 1,
            frac: 0.0,
            active: false,
        }
    } else if coord >= last {
        Axis {
            i0: n - 2,
            i1: n - 1,
            frac: 1.0,
            active: false,
        }
    } else {
        let i0 = coord.floor() as usize;
        Axis {
            i0,
            i1: i0 + 1,
            frac: coord - i0 as f64,
            active: true,
        }
    }
}

/// Where a query lands on the pixel grid: the four interpolation nodes and
/// their weights. Shared by the forward sampler and the gradient scatter.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Footprint {
    pub idx: [usize; 4],
    pub weight: [f64; 4],
    fx: f64,
    fy: f64,
    active_x: bool,
    active_y: bool,
    pub in_bounds: bool,
}

impl Footprint {
    #[inline]
    pub fn new(width: usize, height: usize, x: f64, y: f64) -> Self {
        let ax = axis(x, width);
        let ay = axis(y, height);
        let (fx, fy) = (ax.frac, ay.frac);
        Footprint {
            idx: [
                ay.i0 * width + ax.i0,
                ay.i0 * width + ax.i1,
                ay.i1 * width + ax.i0,
                ay.i1 * width + ax.i1,
            ],
            weight: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
            fx,
            fy,
            active_x: ax.active,
            active_y: ay.active,
            in_bounds: x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64,
        }
    }

    #[inline]
    pub fn value(&self, plane: &[f64]) -> f64 {
        let [a, b, c, d] = self.idx;
        let (fx, fy) = (self.fx, self.fy);
        (1.0 - fy) * ((1.0 - fx) * plane[a] + fx * plane[b]) + fy * ((1.0 - fx) * plane[c] + fx * plane[d])
    }

    #[inline]
    pub fn d_dx(&self, plane: &[f64]) -> f64 {
        if !self.active_x {
            return 0.0;
        }
        let [a, b, c, d] = self.idx;
        (1.0 - self.fy) * (plane[b] - plane[a]) + self.fy * (plane[d] - plane[c])
    }

    #[inline]
    pub fn d_dy(&self, plane: &[f64]) -> f64 {
        if !self.active_y {
            return 0.0;
        }
        let [a, b, c, d] = self.idx;
        (1.0 - self.fx) * (plane[c] - plane[a]) + self.fx * (plane[d] - plane[b])
    }

    /// Adds `g * ∂value/∂node` into `plane` (the transpose of sampling).
    #[inline]
    pub fn scatter(&self, plane: &mut [f64], g: f64) {
        for k in 0..4 {
            plane[self.idx[k]] += g * self.weight[k];
        }
    }
}

pub fn sample_bilinear(img: &ImageField, x: f64, y: f64) -> SampleResult {
    let fp = Footprint::new(img.width(), img.height(), x, y);
    let channels = img.channels();
    let mut out = SampleResult {
        value: Vec::with_capacity(channels),
        d_dx: Vec::with_capacity(channels),
        d_dy: Vec::with_capacity(channels),
        in_bounds: fp.in_bounds,
    };
    for c in 0..channels {
        let plane = img.plane(c);
        out.value.push(fp.value(plane));
        out.d_dx.push(fp.d_dx(plane));
        out.d_dy.push(fp.d_dy(plane));
    }
    out
}

/// A warped raster plus everything the reverse pass needs: spatial
/// derivatives of the source at each query and the query footprints.
#[derive(Clone, Debug)]
pub(crate) struct Warped {
    pub image: ImageField,
    pub d_dx: ImageField,
    pub d_dy: ImageField,
    pub valid: Mask,
    pub footprints: Vec<Footprint>,
}

pub(crate) fn warp_by(src: &ImageField, mut coord: impl FnMut(usize, usize) -> (f64, f64)) -> Warped {
    let (w, h) = src.extent();
    let channels = src.channels();
    let n = w * h;
    let mut footprints = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let (qx, qy) = coord(x, y);
            footprints.push(Footprint::new(w, h, qx, qy));
        }
    }
    let mut image = ImageField::zeros(w, h, channels);
    let mut d_dx = ImageField::zeros(w, h, channels);
    let mut d_dy = ImageField::zeros(w, h, channels);
    for c in 0..channels {
        let plane = src.plane(c);
        let out = image.plane_mut(c);
        for (o, fp) in out.iter_mut().zip(&footprints) {
            *o = fp.value(plane);
        }
        let out = d_dx.plane_mut(c);
        for (o, fp) in out.iter_mut().zip(&footprints) {
            *o = fp.d_dx(plane);
        }
        let out = d_dy.plane_mut(c);
        for (o, fp) in out.iter_mut().zip(&footprints) {
            *o = fp.d_dy(plane);
        }
    }
    let valid = Mask::from_vec(w, h, footprints.iter().map(|f| f.in_bounds).collect())
        .expect("one footprint per pixel");
    Warped {
        image,
        d_dx,
        d_dy,
        valid,
        footprints,
    }
}

pub(crate) fn stereo_coords(d: &ImageField) -> impl FnMut(usize, usize) -> (f64, f64) + '_ {
    let plane = d.plane(0);
    let w = d.width();
    move |x, y| (x as f64 - plane[y * w + x], y as f64)
}

pub(crate) fn flow_coords(flow: &ImageField) -> impl FnMut(usize, usize) -> (f64, f64) + '_ {
    let (fx, fy) = (flow.plane(0), flow.plane(1));
    let w = flow.width();
    move |x, y| {
        let i = y * w + x;
        (x as f64 + fx[i], y as f64 + fy[i])
    }
}

/// Samples the right view at `p - d(p)` for every left-view pixel `p`.
pub fn warp_stereo(src_right: &ImageField, d: &ImageField) -> Result<(ImageField, Mask)> {
    d.ensure_extent(src_right.extent())?;
    d.ensure_channels(1)?;
    let w = warp_by(src_right, stereo_coords(d));
    Ok((w.image, w.valid))
}

/// Samples `src` at `p + F(p)`.
pub fn warp_temporal(src: &ImageField, flow: &ImageField) -> Result<(ImageField, Mask)> {
    flow.ensure_extent(src.extent())?;
    flow.ensure_channels(2)?;
    let w = warp_by(src, flow_coords(flow));
    Ok((w.image, w.valid))
}

/// Same sampling rule as [`warp_temporal`], for disparity or flow maps.
pub fn warp_scalar_by_flow(field: &ImageField, flow: &ImageField) -> Result<(ImageField, Mask)> {
    warp_temporal(field, flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_x(w: usize, h: usize) -> ImageField {
        ImageField::from_fn(w, h, 1, |_, x, _| x as f64)
    }

    #[test]
    fn nodes_are_exact() {
        let img = ImageField::from_fn(5, 4, 2, |c, x, y| (c * 100 + y * 10 + x) as f64 * 0.37);
        for y in 0..4 {
            for x in 0..5 {
                let s = sample_bilinear(&img, x as f64, y as f64);
                assert!(s.in_bounds);
                assert_eq!(s.value[0], img.get(0, x, y));
                assert_eq!(s.value[1], img.get(1, x, y));
            }
        }
    }

    #[test]
    fn cell_center_is_mean_of_corners() {
        let img = ImageField::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(sample_bilinear(&img, 0.5, 0.5).value[0], 1.5);
    }

    #[test]
    fn out_of_range_query_clamps() {
        let img = ImageField::from_vec(2, 2, 1, vec![7.0, 1.0, 2.0, 3.0]).unwrap();
        let s = sample_bilinear(&img, -2.0, 0.0);
        assert_eq!(s.value[0], 7.0);
        assert!(!s.in_bounds);
        assert_eq!(s.d_dx[0], 0.0);
    }

    #[test]
    fn cell_boundary_takes_right_sided_derivative() {
        let img = ImageField::from_vec(3, 1, 1, vec![0.0, 1.0, 5.0]).unwrap();
        assert_eq!(sample_bilinear(&img, 1.0, 0.0).d_dx[0], 4.0);
    }

    #[test]
    fn zero_disparity_is_identity() {
        let img = ImageField::from_fn(6, 5, 1, |_, x, y| ((x * 7 + y * 3) % 5) as f64);
        let (out, valid) = warp_stereo(&img, &ImageField::zeros(6, 5, 1)).unwrap();
        assert_eq!(out, img);
        assert_eq!(valid.count(), 30);
    }

    #[test]
    fn x_constant_image_is_invariant_to_stereo_shift() {
        let img = ImageField::from_fn(6, 5, 1, |_, _, y| y as f64 * 0.1);
        let d = ImageField::from_fn(6, 5, 1, |_, x, y| 0.3 * (x + y) as f64);
        let (out, _) = warp_stereo(&img, &d).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn ramp_shifted_by_unit_disparity() {
        let img = ramp_x(8, 3);
        let (out, valid) = warp_stereo(&img, &ImageField::filled(8, 3, 1, 1.0)).unwrap();
        for y in 0..3 {
            for x in 1..8 {
                assert_eq!(out.get(0, x, y), x as f64 - 1.0);
                assert!(valid.get(x, y));
            }
            assert!(!valid.get(0, y));
        }
    }

    #[test]
    fn zero_flow_is_identity() {
        let img = ImageField::from_fn(5, 6, 3, |c, x, y| (c + x * y) as f64);
        let (out, _) = warp_temporal(&img, &ImageField::zeros(5, 6, 2)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn diagonal_ramp_with_unit_flow() {
        let img = ImageField::from_fn(7, 7, 1, |_, x, y| (x + y) as f64);
        let flow = ImageField::filled(7, 7, 2, 1.0);
        let (out, _) = warp_temporal(&img, &flow).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.get(0, x, y), img.get(0, x, y) + 2.0);
            }
        }
    }

    #[test]
    fn constant_field_is_invariant_to_flow() {
        let f = ImageField::filled(5, 5, 1, 2.5);
        let flow = ImageField::from_fn(5, 5, 2, |c, x, y| 0.7 * c as f64 + 0.3 * x as f64 - 0.2 * y as f64);
        let (out, _) = warp_scalar_by_flow(&f, &flow).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn scalar_ramp_shifted_by_flow() {
        let d2 = ImageField::from_fn(10, 2, 1, |_, x, _| 3.0 + 0.5 * x as f64);
        let mut flow = ImageField::zeros(10, 2, 2);
        flow.plane_mut(0).fill(2.0);
        let (out, valid) = warp_scalar_by_flow(&d2, &flow).unwrap();
        for x in 0..8 {
            assert_eq!(out.get(0, x, 0), d2.get(0, x + 2, 0));
            assert!(valid.get(x, 0));
        }
        assert!(!valid.get(8, 0));
    }

    #[test]
    fn extent_mismatch_rejected() {
        assert!(warp_stereo(&ImageField::zeros(3, 3, 1), &ImageField::zeros(3, 2, 1)).is_err());
        assert!(warp_temporal(&ImageField::zeros(3, 3, 1), &ImageField::zeros(3, 3, 1)).is_err());
    }

    fn smooth_image() -> ImageField {
        ImageField::from_fn(9, 8, 2, |c, x, y| {
            let (x, y) = (x as f64, y as f64);
            (0.3 * x + 0.11 * c as f64).sin() + (0.45 * y - 0.2 * x).cos()
        })
    }

    proptest! {
        #[test]
        fn derivatives_match_central_differences(x in 0.0f64..8.0, y in 0.0f64..7.0) {
            let frac = |v: f64| v - v.floor();
            let eps = 1e-6;
            prop_assume!(frac(x) > 1e-3 && frac(x) < 1.0 - 1e-3);
            prop_assume!(frac(y) > 1e-3 && frac(y) < 1.0 - 1e-3);
            let img = smooth_image();
            let s = sample_bilinear(&img, x, y);
            for c in 0..2 {
                let fdx = (sample_bilinear(&img, x + eps, y).value[c] - sample_bilinear(&img, x - eps, y).value[c]) / (2.0 * eps);
                let fdy = (sample_bilinear(&img, x, y + eps).value[c] - sample_bilinear(&img, x, y - eps).value[c]) / (2.0 * eps);
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                prop_assert!(rel(s.d_dx[c], fdx) < 1e-6, "dx {} vs {}", s.d_dx[c], fdx);
                prop_assert!(rel(s.d_dy[c], fdy) < 1e-6, "dy {} vs {}", s.d_dy[c], fdy);
            }
        }

        #[test]
        fn warping_is_linear_in_source(a in -3.0f64..3.0, b in -3.0f64..3.0, shift in -2.0f64..4.0) {
            let i = smooth_image();
            let j = ImageField::from_fn(9, 8, 2, |c, x, y| ((x * 3 + y * 5 + c) % 7) as f64);
            let combo = ImageField::from_vec(9, 8, 2, i.data().iter().zip(j.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let d = ImageField::from_fn(9, 8, 1, |_, x, y| shift + 0.1 * (x as f64) - 0.05 * y as f64);
            let (wi, _) = warp_stereo(&i, &d).unwrap();
            let (wj, _) = warp_stereo(&j, &d).unwrap();
            let (wc, _) = warp_stereo(&combo, &d).unwrap();
            for k in 0..wc.data().len() {
                let expect = a * wi.data()[k] + b * wj.data()[k];
                prop_assert!((wc.data()[k] - expect).abs() < 1e-12);
            }
        }
    }
}
