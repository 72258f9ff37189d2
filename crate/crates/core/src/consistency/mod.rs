//! The consistency loss: stereo and temporal photometric terms, the
//! disparity-flow closure term, edge-aware smoothness, and the
//! forward-backward occlusion check that gates the temporal terms.

mod photometric;

pub(crate) use photometric::photometric_vjp;
pub use photometric::{photometric_error, PhotometricParams};

use crate::error::{Error, Result};
use crate::fields::{ImageField, Mask, OcclusionMask, SceneFlowState, StereoClip};
use crate::warp::{flow_coords, stereo_coords, warp_by, Warped};

/// Term weights `(ω_pd, ω_pf, ω_df, ω_s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub stereo: f64,
    pub flow: f64,
    pub disparity_flow: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            stereo: 1.0,
            flow: 1.0,
            disparity_flow: 1.0,
            smooth: 0.1,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        stereo: 0.0,
        flow: 0.0,
        disparity_flow: 0.0,
        smooth: 0.0,
    };

    pub fn scaled(&self, k: f64) -> LossWeights {
        LossWeights {
            stereo: self.stereo * k,
            flow: self.flow * k,
            disparity_flow: self.disparity_flow * k,
            smooth: self.smooth * k,
        }
    }

    /// Weighted sum in the fixed term order.
    pub fn combine(&self, pd: f64, pf: f64, df: f64, smooth: f64) -> f64 {
        self.stereo * pd + self.flow * pf + self.disparity_flow * df + self.smooth * smooth
    }
}

/// Thresholds of the forward-backward check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionParams {
    pub w1: f64,
    pub w2: f64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        Self { w1: 0.01, w2: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParams {
    pub photometric: PhotometricParams,
    pub occlusion: OcclusionParams,
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        self.photometric.validate()?;
        if self.occlusion.w1 < 0.0 || self.occlusion.w2 < 0.0 {
            return Err(Error::InvalidArgument("occlusion thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-pixel maps and scalar means of every term.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Stereo term, averaged over the two frames.
    pub pd_map: ImageField,
    pub pf_map: ImageField,
    pub df_map: ImageField,
    /// Sum of the smoothness maps of d1, d2, flow and dchange.
    pub smooth_map: ImageField,
    /// Weighted per-pixel sum of the four maps above; the refiner's loss channel.
    pub total_map: ImageField,
    pub pd: f64,
    pub pf: f64,
    pub df: f64,
    pub smooth: f64,
    pub total: f64,
    pub weights: LossWeights,
    pub occlusion: OcclusionMask,
}

/// Per-pixel `valid * pe(L(p), R(p - D(p)))`.
pub fn stereo_loss(l: &ImageField, r: &ImageField, d: &ImageField, params: &PhotometricParams) -> Result<ImageField> {
    r.ensure_extent(l.extent())?;
    d.ensure_extent(l.extent())?;
    d.ensure_channels(1)?;
    let warped = warp_by(r, stereo_coords(d));
    let pe = photometric_error(l, &warped.image, params)?;
    Ok(masked(pe, &warped.valid, None))
}

/// Forward-backward check: 1 where `|F + F̂b|² < w1 (|F|² + |F̂b|²) + w2`,
/// with `F̂b` the backward flow sampled at `p + F(p)`.
pub fn occlusion_mask(f_fwd: &ImageField, f_bwd: &ImageField, params: &OcclusionParams) -> Result<OcclusionMask> {
    f_fwd.ensure_channels(2)?;
    f_bwd.ensure_channels(2)?;
    f_bwd.ensure_extent(f_fwd.extent())?;
    let warped = warp_by(f_bwd, flow_coords(f_fwd));
    Ok(occlusion_from_warped(f_fwd, &warped.image, params))
}

fn occlusion_from_warped(f_fwd: &ImageField, bwd_warped: &ImageField, params: &OcclusionParams) -> OcclusionMask {
    let (w, h) = f_fwd.extent();
    let (fx, fy) = (f_fwd.plane(0), f_fwd.plane(1));
    let (bx, by) = (bwd_warped.plane(0), bwd_warped.plane(1));
    let data = (0..w * h)
        .map(|i| {
            let sx = fx[i] + bx[i];
            let sy = fy[i] + by[i];
            let lhs = sx * sx + sy * sy;
            let rhs = params.w1 * (fx[i] * fx[i] + fy[i] * fy[i] + bx[i] * bx[i] + by[i] * by[i]) + params.w2;
            lhs < rhs
        })
        .collect();
    Mask::from_vec(w, h, data).expect("extent preserved")
}

/// Per-pixel `O_f * valid * pe(L1(p), L2(p + F(p)))`.
pub fn flow_loss(
    l1: &ImageField,
    l2: &ImageField,
    flow: &ImageField,
    mask: &OcclusionMask,
    params: &PhotometricParams,
) -> Result<ImageField> {
    l2.ensure_extent(l1.extent())?;
    flow.ensure_extent(l1.extent())?;
    flow.ensure_channels(2)?;
    check_mask(mask, l1.extent())?;
    let warped = warp_by(l2, flow_coords(flow));
    let pe = photometric_error(l1, &warped.image, params)?;
    Ok(masked(pe, &warped.valid, Some(mask)))
}

/// Per-pixel `O_f * valid * |D1(p) + C(p) - D2(p + F(p))|`.
pub fn disparity_flow_loss(state: &SceneFlowState, mask: &OcclusionMask) -> Result<ImageField> {
    check_mask(mask, state.extent())?;
    let warped = warp_by(&state.d2, flow_coords(&state.flow));
    let residual = closure_residual(state, &warped);
    Ok(masked(residual.map(f64::abs), &warped.valid, Some(mask)))
}

pub(crate) fn closure_residual(state: &SceneFlowState, d2_warped: &Warped) -> ImageField {
    let (w, h) = state.extent();
    let (d1, c, d2w) = (state.d1.plane(0), state.dchange.plane(0), d2_warped.image.plane(0));
    ImageField::from_vec(w, h, 1, (0..w * h).map(|i| d1[i] + c[i] - d2w[i]).collect())
        .expect("finite residual")
}

/// Mean absolute forward difference of the guide across channels, per axis.
/// Entries in the last column (x) or row (y) are zero.
pub(crate) fn guide_weights(guide: &ImageField) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = guide.extent();
    let channels = guide.channels() as f64;
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for c in 0..guide.channels() {
        let p = guide.plane(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    gx[i] += (p[i + 1] - p[i]).abs() / channels;
                }
                if y + 1 < h {
                    gy[i] += (p[i + w] - p[i]).abs() / channels;
                }
            }
        }
    }
    (gx.into_iter().map(|g| (-g).exp()).collect(), gy.into_iter().map(|g| (-g).exp()).collect())
}

/// First-order edge-aware smoothness:
/// `|∂x f| e^{-|∂x I|} + |∂y f| e^{-|∂y I|}`, averaged over field channels.
pub fn smoothness_loss(field: &ImageField, guide: &ImageField) -> Result<ImageField> {
    field.ensure_extent(guide.extent())?;
    let (wx, wy) = guide_weights(guide);
    Ok(smoothness_with_weights(field, &wx, &wy))
}

fn smoothness_with_weights(field: &ImageField, wx: &[f64], wy: &[f64]) -> ImageField {
    let (w, h) = field.extent();
    let k = field.channels() as f64;
    let mut out = ImageField::zeros(w, h, 1);
    for c in 0..field.channels() {
        let p = field.plane(c);
        let dst = out.plane_mut(0);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut s = 0.0;
                if x + 1 < w {
                    s += (p[i + 1] - p[i]).abs() * wx[i];
                }
                if y + 1 < h {
                    s += (p[i + w] - p[i]).abs() * wy[i];
                }
                dst[i] += s / k;
            }
        }
    }
    out
}

fn check_mask(mask: &Mask, extent: (usize, usize)) -> Result<()> {
    if mask.extent() != extent {
        return Err(Error::ExtentMismatch {
            expected: extent,
            got: mask.extent(),
        });
    }
    Ok(())
}

fn masked(mut map: ImageField, valid: &Mask, occlusion: Option<&Mask>) -> ImageField {
    let v = valid.data();
    let o = occlusion.map(|m| m.data());
    for (i, e) in map.data_mut().iter_mut().enumerate() {
        let keep = v[i] && o.is_none_or(|o| o[i]);
        if !keep {
            *e = 0.0;
        }
    }
    map
}

pub(crate) fn masked_mean(map: &ImageField, count: usize) -> f64 {
    map.data().iter().sum::<f64>() / count.max(1) as f64
}

/// Everything the forward pass computes that the reverse pass reuses.
pub(crate) struct Evaluation {
    pub breakdown: LossBreakdown,
    pub r1_warp: Warped,
    pub r2_warp: Warped,
    pub l2_warp: Warped,
    pub d2_warp: Warped,
    pub residual: ImageField,
    pub smooth_weights: [(Vec<f64>, Vec<f64>); 2],
}

pub(crate) fn evaluate(
    clip: &StereoClip,
    state: &SceneFlowState,
    weights: &LossWeights,
    params: &LossParams,
) -> Result<Evaluation> {
    params.validate()?;
    let extent = clip.extent();
    if state.extent() != extent {
        return Err(Error::ExtentMismatch {
            expected: extent,
            got: state.extent(),
        });
    }
    if clip.l1.channels() != clip.r1.channels() {
        return Err(Error::ChannelMismatch {
            expected: clip.l1.channels(),
            got: clip.r1.channels(),
        });
    }
    let bwd = clip.backward_flow.as_ref().ok_or(Error::MissingBackwardFlow)?;
    let (w, h) = extent;
    let n = w * h;
    let pp = &params.photometric;

    let r1_warp = warp_by(&clip.r1, stereo_coords(&state.d1));
    let r2_warp = warp_by(&clip.r2, stereo_coords(&state.d2));
    let pd1 = masked(photometric_error(&clip.l1, &r1_warp.image, pp)?, &r1_warp.valid, None);
    let pd2 = masked(photometric_error(&clip.l2, &r2_warp.image, pp)?, &r2_warp.valid, None);
    let pd = 0.5 * (masked_mean(&pd1, r1_warp.valid.count()) + masked_mean(&pd2, r2_warp.valid.count()));
    let pd_map = ImageField::from_vec(w, h, 1, pd1.data().iter().zip(pd2.data()).map(|(a, b)| 0.5 * (a + b)).collect())?;

    let bwd_warp = warp_by(bwd, flow_coords(&state.flow));
    let occlusion = occlusion_from_warped(&state.flow, &bwd_warp.image, &params.occlusion);

    let l2_warp = warp_by(&clip.l2, flow_coords(&state.flow));
    let pf_map = masked(photometric_error(&clip.l1, &l2_warp.image, pp)?, &l2_warp.valid, Some(&occlusion));
    let flow_count = l2_warp.valid.count();
    let pf = masked_mean(&pf_map, flow_count);

    let d2_warp = warp_by(&state.d2, flow_coords(&state.flow));
    let residual = closure_residual(state, &d2_warp);
    let df_map = masked(residual.map(f64::abs), &d2_warp.valid, Some(&occlusion));
    let df = masked_mean(&df_map, d2_warp.valid.count());

    let g1 = guide_weights(&clip.l1);
    let g2 = guide_weights(&clip.l2);
    let mut smooth_map = smoothness_with_weights(&state.d1, &g1.0, &g1.1);
    for (field, g) in [(&state.d2, &g2), (&state.flow, &g1), (&state.dchange, &g1)] {
        let s = smoothness_with_weights(field, &g.0, &g.1);
        for (a, b) in smooth_map.data_mut().iter_mut().zip(s.data()) {
            *a += b;
        }
    }
    let smooth = smooth_map.data().iter().sum::<f64>() / n as f64;

    let total = weights.combine(pd, pf, df, smooth);
    let total_map = ImageField::from_vec(
        w,
        h,
        1,
        (0..n)
            .map(|i| {
                weights.combine(
                    pd_map.data()[i],
                    pf_map.data()[i],
                    df_map.data()[i],
                    smooth_map.data()[i],
                )
            })
            .collect(),
    )?;

    Ok(Evaluation {
        breakdown: LossBreakdown {
            pd_map,
            pf_map,
            df_map,
            smooth_map,
            total_map,
            pd,
            pf,
            df,
            smooth,
            total,
            weights: *weights,
            occlusion,
        },
        r1_warp,
        r2_warp,
        l2_warp,
        d2_warp,
        residual,
        smooth_weights: [g1, g2],
    })
}

/// The weighted consistency loss of `state` on `clip`.
///
/// Scalars are means over in-bounds pixels of each warp (the stereo term
/// averages the two frames); smoothness is a mean over all pixels, summed over
/// the four fields. The occlusion mask is recomputed from the current forward
/// flow and the clip's fixed backward flow.
pub fn total_loss(
    clip: &StereoClip,
    state: &SceneFlowState,
    weights: &LossWeights,
    params: &LossParams,
) -> Result<LossBreakdown> {
    Ok(evaluate(clip, state, weights, params)?.breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SceneFlowState;

    fn flow_field(w: usize, h: usize, u: f64, v: f64) -> ImageField {
        let mut f = ImageField::zeros(w, h, 2);
        f.plane_mut(0).fill(u);
        f.plane_mut(1).fill(v);
        f
    }

    fn textured(w: usize, h: usize) -> ImageField {
        ImageField::from_fn(w, h, 1, |_, x, y| 0.5 + 0.2 * (0.5 * x as f64).sin() + 0.1 * (0.3 * y as f64).cos())
    }

    #[test]
    fn exact_inverse_flows_pass_the_check() {
        let m = occlusion_mask(&flow_field(6, 5, 10.0, 0.0), &flow_field(6, 5, -10.0, 0.0), &OcclusionParams::default()).unwrap();
        assert_eq!(m.count(), 30);
    }

    #[test]
    fn zero_flows_pass_the_check() {
        let m = occlusion_mask(&flow_field(4, 4, 0.0, 0.0), &flow_field(4, 4, 0.0, 0.0), &OcclusionParams::default()).unwrap();
        assert_eq!(m.count(), 16);
    }

    #[test]
    fn inconsistent_flows_fail_the_check() {
        // 25 >= 0.01 * 125 + 0.05
        let m = occlusion_mask(&flow_field(6, 5, 10.0, 0.0), &flow_field(6, 5, -5.0, 0.0), &OcclusionParams::default()).unwrap();
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn stereo_loss_zero_for_identical_views() {
        let l = textured(8, 6);
        let map = stereo_loss(&l, &l, &ImageField::zeros(8, 6, 1), &PhotometricParams::default()).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stereo_loss_masks_out_of_bounds() {
        let l = textured(8, 6);
        let r = l.map(|v| 1.0 - v);
        let d = ImageField::filled(8, 6, 1, 2.5);
        let map = stereo_loss(&l, &r, &d, &PhotometricParams::default()).unwrap();
        for y in 0..6 {
            assert_eq!(map.get(0, 0, y), 0.0);
            assert_eq!(map.get(0, 1, y), 0.0);
            assert!(map.get(0, 3, y) > 0.0);
        }
    }

    #[test]
    fn flow_loss_zero_for_static_scene() {
        let l = textured(7, 7);
        let m = Mask::filled(7, 7, true);
        let map = flow_loss(&l, &l, &ImageField::zeros(7, 7, 2), &m, &PhotometricParams::default()).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn occluded_pixels_do_not_contribute() {
        let l1 = textured(7, 7);
        let l2 = l1.map(|v| v * 0.5);
        let m = Mask::from_fn(7, 7, |x, _| x != 3);
        let map = flow_loss(&l1, &l2, &ImageField::zeros(7, 7, 2), &m, &PhotometricParams::default()).unwrap();
        for y in 0..7 {
            assert_eq!(map.get(0, 3, y), 0.0);
            assert!(map.get(0, 2, y) > 0.0);
        }
    }

    fn closure_state(d1: f64, c: f64, d2: f64) -> SceneFlowState {
        SceneFlowState::constant(5, 5, d1, d2, (1.0, 0.0), c)
    }

    #[test]
    fn closure_is_exactly_zero() {
        let s = closure_state(5.0, 2.0, 7.0);
        let map = disparity_flow_loss(&s, &Mask::filled(5, 5, true)).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closure_residual_of_one() {
        let s = closure_state(5.0, 1.0, 7.0);
        let map = disparity_flow_loss(&s, &Mask::filled(5, 5, true)).unwrap();
        for y in 0..5 {
            for x in 0..4 {
                assert_eq!(map.get(0, x, y), 1.0);
            }
            // p + F leaves the image in the last column
            assert_eq!(map.get(0, 4, y), 0.0);
        }
    }

    #[test]
    fn masked_closure_is_zero() {
        let s = closure_state(5.0, 1.0, 7.0);
        let map = disparity_flow_loss(&s, &Mask::filled(5, 5, false)).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothness_of_constant_field_is_zero() {
        let map = smoothness_loss(&ImageField::filled(6, 4, 1, 3.0), &textured(6, 4)).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothness_of_unit_ramp_with_flat_guide() {
        let f = ImageField::from_fn(6, 4, 1, |_, x, _| x as f64);
        let map = smoothness_loss(&f, &ImageField::filled(6, 4, 1, 0.4)).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(map.get(0, x, y), 1.0);
            }
        }
    }

    #[test]
    fn smoothness_step_attenuated_by_guide_edge() {
        let g = 0.8;
        let f = ImageField::from_vec(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let guide = ImageField::from_vec(2, 1, 1, vec![0.1, 0.1 + g]).unwrap();
        let map = smoothness_loss(&f, &guide).unwrap();
        assert!((map.get(0, 0, 0) - (-g).exp()).abs() < 1e-15);
    }

    fn clip(w: usize, h: usize) -> StereoClip {
        let l = textured(w, h);
        let r = ImageField::from_fn(w, h, 1, |_, x, y| l.get(0, (x + 1).min(w - 1), y));
        StereoClip::new(l.clone(), r.clone(), l, r)
            .unwrap()
            .with_backward_flow(ImageField::zeros(w, h, 2))
            .unwrap()
    }

    #[test]
    fn total_loss_requires_backward_flow() {
        let mut c = clip(6, 6);
        c.backward_flow = None;
        let s = SceneFlowState::constant(6, 6, 1.0, 1.0, (0.0, 0.0), 0.0);
        let err = total_loss(&c, &s, &LossWeights::default(), &LossParams::default()).unwrap_err();
        assert!(matches!(err, Error::MissingBackwardFlow));
    }

    #[test]
    fn total_is_weighted_sum_and_scales_with_weights() {
        let c = clip(10, 8);
        let s = SceneFlowState::new(
            ImageField::from_fn(10, 8, 1, |_, x, _| 1.0 + 0.1 * x as f64),
            ImageField::filled(10, 8, 1, 0.7),
            ImageField::from_fn(10, 8, 2, |c, x, y| 0.3 * c as f64 + 0.05 * (x + y) as f64),
            ImageField::from_fn(10, 8, 1, |_, _, y| 0.2 * y as f64),
        )
        .unwrap();
        let w = LossWeights::default();
        let b = total_loss(&c, &s, &w, &LossParams::default()).unwrap();
        assert_eq!(b.total, w.combine(b.pd, b.pf, b.df, b.smooth));
        for m in [&b.pd_map, &b.pf_map, &b.df_map, &b.smooth_map, &b.total_map] {
            assert!(m.data().iter().all(|&v| v >= 0.0));
        }
        let b3 = total_loss(&c, &s, &w.scaled(3.0), &LossParams::default()).unwrap();
        assert!((b3.total - 3.0 * b.total).abs() <= 1e-15 * b.total.abs().max(1.0));
        let b0 = total_loss(&c, &s, &LossWeights::ZERO, &LossParams::default()).unwrap();
        assert_eq!(b0.total, 0.0);
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.stereo, w.flow, w.disparity_flow, w.smooth), (1.0, 1.0, 1.0, 0.1));
        let o = OcclusionParams::default();
        assert_eq!((o.w1, o.w2), (0.01, 0.05));
    }
}
