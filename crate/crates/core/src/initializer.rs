//! Block-matching initializer: produces the starting scene flow and the
//! backward flow from four images, with no learned components.
//!
//! Matching cost is the sum of absolute differences over a square patch
//! (truncated at the border, with clamp-to-edge lookups into the other view),
//! minimized over integer displacements and refined by a parabola through the
//! neighbouring costs.

use crate::error::{Error, Result};
use crate::fields::{ImageField, SceneFlowState, StereoClip};
use crate::filter::box_sum;
use crate::warp::{flow_coords, warp_by};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub max_disp: usize,
    /// Odd patch side length.
    pub patch: usize,
    pub flow_radius: usize,
    /// Number of pyramid levels for flow; each extra level doubles reach.
    pub pyramid_levels: usize,
    /// Bound on |dchange| after assembly.
    pub dchange_max: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            max_disp: 40,
            patch: 5,
            flow_radius: 8,
            pyramid_levels: 1,
            dchange_max: 8.0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("patch must be odd, got {}", self.patch)));
        }
        if self.flow_radius == 0 {
            return Err(Error::InvalidArgument("flow radius must be at least 1".into()));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidArgument("need at least one pyramid level".into()));
        }
        Ok(())
    }
}

/// Parabola vertex through `(−1, lo)`, `(0, mid)`, `(1, hi)`, clamped to ±0.5.
/// An exact match (`mid == 0`) is left where it is.
#[inline]
fn parabolic_offset(lo: f64, mid: f64, hi: f64) -> f64 {
    let denom = lo - 2.0 * mid + hi;
    if mid > 0.0 && denom > 0.0 {
        (0.5 * (lo - hi) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Patch SAD for every pixel at one uniform displacement `(dx, dy)` of `b`.
fn sad_plane(a: &ImageField, b: &ImageField, dx: isize, dy: isize, r: usize) -> Vec<f64> {
    let (w, h) = a.extent();
    let mut diff = vec![0.0; w * h];
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for y in 0..h {
            let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let row_a = &pa[y * w..(y + 1) * w];
            let row_b = &pb[sy * w..(sy + 1) * w];
            let out = &mut diff[y * w..(y + 1) * w];
            for x in 0..w {
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                out[x] += (row_a[x] - row_b[sx]).abs();
            }
        }
    }
    box_sum(&diff, w, h, r)
}

/// Per-pixel disparity minimizing SAD between `l(p)` and `r(p − d)`.
pub fn block_match_disparity(l: &ImageField, r: &ImageField, max_disp: usize, patch: usize) -> Result<ImageField> {
    r.ensure_extent(l.extent())?;
    r.ensure_channels(l.channels())?;
    if patch.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("patch must be odd, got {patch}")));
    }
    let (w, h) = l.extent();
    let n = w * h;
    let pr = patch / 2;
    let volume: Vec<Vec<f64>> = (0..=max_disp).map(|d| sad_plane(l, r, -(d as isize), 0, pr)).collect();
    let mut out = ImageField::zeros(w, h, 1);
    let dst = out.plane_mut(0);
    for i in 0..n {
        let mut best = 0;
        for d in 1..=max_disp {
            if volume[d][i] < volume[best][i] {
                best = d;
            }
        }
        let mut est = best as f64;
        if best > 0 && best < max_disp {
            est += parabolic_offset(volume[best - 1][i], volume[best][i], volume[best + 1][i]);
        }
        dst[i] = est;
    }
    Ok(out)
}

/// Integer search over a full `(2r+1)²` window with a uniform origin.
fn flow_full_search(a: &ImageField, b: &ImageField, radius: usize, pr: usize) -> ImageField {
    let (w, h) = a.extent();
    let n = w * h;
    let side = 2 * radius + 1;
    let r = radius as isize;
    // volume[(dy + r) * side + (dx + r)]
    let mut volume = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            volume.push(sad_plane(a, b, dx, dy, pr));
        }
    }
    let mut flow = ImageField::zeros(w, h, 2);
    for i in 0..n {
        // lexicographic (dy, dx) order with strict improvement: ties keep the smallest
        let mut best = 0;
        for k in 1..side * side {
            if volume[k][i] < volume[best][i] {
                best = k;
            }
        }
        let (by, bx) = (best / side, best % side);
        let mut fx = bx as f64 - radius as f64;
        let mut fy = by as f64 - radius as f64;
        if bx > 0 && bx + 1 < side {
            fx += parabolic_offset(volume[best - 1][i], volume[best][i], volume[best + 1][i]);
        }
        if by > 0 && by + 1 < side {
            fy += parabolic_offset(volume[best - side][i], volume[best][i], volume[best + side][i]);
        }
        flow.plane_mut(0)[i] = fx;
        flow.plane_mut(1)[i] = fy;
    }
    flow
}

fn patch_sad(a: &ImageField, b: &ImageField, x: usize, y: usize, dx: isize, dy: isize, pr: usize) -> f64 {
    let (w, h) = a.extent();
    let mut s = 0.0;
    for yy in y.saturating_sub(pr)..=(y + pr).min(h - 1) {
        let sy = (yy as isize + dy).clamp(0, h as isize - 1) as usize;
        for xx in x.saturating_sub(pr)..=(x + pr).min(w - 1) {
            let sx = (xx as isize + dx).clamp(0, w as isize - 1) as usize;
            for c in 0..a.channels() {
                s += (a.get(c, xx, yy) - b.get(c, sx, sy)).abs();
            }
        }
    }
    s
}

/// ±1 search around an integer prior at each pixel, then sub-pixel refinement.
fn flow_refine_around(a: &ImageField, b: &ImageField, prior: &[(isize, isize)], pr: usize) -> ImageField {
    let (w, h) = a.extent();
    let mut flow = ImageField::zeros(w, h, 2);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (px, py) = prior[i];
            let mut best = (py - 1, px - 1);
            let mut best_cost = f64::INFINITY;
            for dy in py - 1..=py + 1 {
                for dx in px - 1..=px + 1 {
                    let c = patch_sad(a, b, x, y, dx, dy, pr);
                    if c < best_cost {
                        best_cost = c;
                        best = (dy, dx);
                    }
                }
            }
            let (dy, dx) = best;
            let cost = |ddx: isize, ddy: isize| patch_sad(a, b, x, y, dx + ddx, dy + ddy, pr);
            flow.plane_mut(0)[i] = dx as f64 + parabolic_offset(cost(-1, 0), best_cost, cost(1, 0));
            flow.plane_mut(1)[i] = dy as f64 + parabolic_offset(cost(0, -1), best_cost, cost(0, 1));
        }
    }
    flow
}

/// 2×2 box downsampling (odd trailing rows/columns are averaged with clamping).
fn downsample(img: &ImageField) -> ImageField {
    let (w, h) = img.extent();
    let (w2, h2) = (w.div_ceil(2), h.div_ceil(2));
    ImageField::from_fn(w2, h2, img.channels(), |c, x, y| {
        let x0 = 2 * x;
        let y0 = 2 * y;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        0.25 * (img.get(c, x0, y0) + img.get(c, x1, y0) + img.get(c, x0, y1) + img.get(c, x1, y1))
    })
}

/// Per-pixel flow minimizing SAD between `a(p)` and `b(p + F)`.
///
/// With `levels > 1` the search runs at the coarsest level of a 2× pyramid and
/// each finer level re-searches ±1 px around the doubled estimate.
pub fn block_match_flow_pyramid(a: &ImageField, b: &ImageField, radius: usize, patch: usize, levels: usize) -> Result<ImageField> {
    b.ensure_extent(a.extent())?;
    b.ensure_channels(a.channels())?;
    if radius == 0 {
        return Err(Error::InvalidArgument("flow search radius must be at least 1".into()));
    }
    if patch.is_multiple_of(2) || levels == 0 {
        return Err(Error::InvalidArgument(format!("bad patch {patch} or level count {levels}")));
    }
    let pr = patch / 2;
    let mut pyramid = vec![(a.clone(), b.clone())];
    for _ in 1..levels {
        let (pa, pb) = pyramid.last().unwrap();
        if pa.width() < 2 * patch || pa.height() < 2 * patch {
            break;
        }
        let next = (downsample(pa), downsample(pb));
        pyramid.push(next);
    }
    let (ca, cb) = pyramid.last().unwrap();
    let mut flow = flow_full_search(ca, cb, radius, pr);
    for (fa, fb) in pyramid.iter().rev().skip(1) {
        let (w, h) = fa.extent();
        let prior: Vec<(isize, isize)> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let (cx, cy) = ((x / 2).min(flow.width() - 1), (y / 2).min(flow.height() - 1));
                (
                    (2.0 * flow.get(0, cx, cy)).round() as isize,
                    (2.0 * flow.get(1, cx, cy)).round() as isize,
                )
            })
            .collect();
        flow = flow_refine_around(fa, fb, &prior, pr);
    }
    Ok(flow)
}

pub fn block_match_flow(a: &ImageField, b: &ImageField, radius: usize, patch: usize) -> Result<ImageField> {
    block_match_flow_pyramid(a, b, radius, patch, 1)
}

/// Assembles the initial state: `d1` from the first pair, `d2` from the
/// second, forward flow `L1 → L2`, backward flow `L2 → L1`, and
/// `C(p) = D2(p + F(p)) − D1(p)` clamped to `±dchange_max`.
pub fn init_state(clip: &StereoClip, config: &InitConfig) -> Result<(SceneFlowState, ImageField)> {
    config.validate()?;
    let d1 = block_match_disparity(&clip.l1, &clip.r1, config.max_disp, config.patch)?;
    let d2 = block_match_disparity(&clip.l2, &clip.r2, config.max_disp, config.patch)?;
    let flow = block_match_flow_pyramid(&clip.l1, &clip.l2, config.flow_radius, config.patch, config.pyramid_levels)?;
    let backward = block_match_flow_pyramid(&clip.l2, &clip.l1, config.flow_radius, config.patch, config.pyramid_levels)?;
    let dchange = assemble_dchange(&d1, &d2, &flow, config.dchange_max);
    Ok((SceneFlowState::new(d1, d2, flow, dchange)?, backward))
}

pub fn assemble_dchange(d1: &ImageField, d2: &ImageField, flow: &ImageField, bound: f64) -> ImageField {
    let warped = warp_by(d2, flow_coords(flow));
    let mut c = warped.image;
    for (v, base) in c.data_mut().iter_mut().zip(d1.data()) {
        *v = (*v - base).clamp(-bound, bound);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, DisparityPlane, LayerMotion, SceneSpec};

    fn texture(w: usize, h: usize) -> ImageField {
        ImageField::from_fn(w, h, 1, |_, x, y| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.15 * (0.31 * x + 0.2 * y).sin() + 0.1 * (0.17 * x - 0.37 * y).cos() + 0.05 * (0.5 * x).sin()
        })
    }

    #[test]
    fn identical_images_give_zero_disparity_and_flow() {
        let img = texture(30, 20);
        let d = block_match_disparity(&img, &img, 8, 5).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
        let f = block_match_flow(&img, &img, 3, 5).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_search_range_gives_zero_disparity() {
        let a = texture(20, 10);
        let b = ImageField::from_fn(20, 10, 1, |_, x, y| a.get(0, (x + 3).min(19), y));
        let d = block_match_disparity(&a, &b, 0, 5).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recovers_plane_disparity() {
        let spec = SceneSpec::single_plane(64, 48, DisparityPlane::constant(4.0), LayerMotion::STILL, 21);
        let s = generate(&spec, 0).unwrap();
        let d = block_match_disparity(&s.clip.l1, &s.clip.r1, 12, 5).unwrap();
        let mut good = 0;
        let mut total = 0;
        for y in 4..44 {
            for x in 8..60 {
                total += 1;
                if (d.get(0, x, y) - 4.0).abs() < 0.5 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.9 * total as f64, "{good}/{total}");
    }

    #[test]
    fn recovers_lateral_shift() {
        let motion = LayerMotion {
            shift_x: 2.0,
            shift_y: 0.0,
            ddisp: 0.0,
        };
        let s = generate(&SceneSpec::single_plane(64, 48, DisparityPlane::constant(4.0), motion, 8), 0).unwrap();
        let f = block_match_flow(&s.clip.l1, &s.clip.l2, 4, 5).unwrap();
        let mut good = 0;
        let mut total = 0;
        for y in 4..44 {
            for x in 4..56 {
                total += 1;
                let e = (f.get(0, x, y) - 2.0).hypot(f.get(1, x, y));
                if e < 0.5 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.9 * total as f64, "{good}/{total}");
    }

    #[test]
    fn pyramid_doubles_reach() {
        let motion = LayerMotion {
            shift_x: 5.0,
            shift_y: 0.0,
            ddisp: 0.0,
        };
        let s = generate(&SceneSpec::single_plane(80, 60, DisparityPlane::constant(4.0), motion, 17), 0).unwrap();
        let frac_good = |f: &ImageField| {
            let mut good = 0;
            for y in 10..50 {
                for x in 10..60 {
                    if (f.get(0, x, y) - 5.0).abs() < 0.5 {
                        good += 1;
                    }
                }
            }
            good as f64 / 2000.0
        };
        let single = block_match_flow_pyramid(&s.clip.l1, &s.clip.l2, 3, 5, 1).unwrap();
        let double = block_match_flow_pyramid(&s.clip.l1, &s.clip.l2, 3, 5, 2).unwrap();
        assert!(frac_good(&single) < 0.1);
        assert!(frac_good(&double) > 0.9);
    }

    #[test]
    fn subpixel_stays_within_half_pixel_of_integer_minimum() {
        for (lo, mid, hi) in [(3.0, 1.0, 2.0), (1.0, 1.0, 5.0), (10.0, 0.0, 0.0), (2.0, 2.0, 2.0)] {
            assert!(parabolic_offset(lo, mid, hi).abs() <= 0.5);
        }
        assert_eq!(parabolic_offset(2.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn init_is_deterministic_and_closes_dchange() {
        let motion = LayerMotion {
            shift_x: 1.0,
            shift_y: 1.0,
            ddisp: 1.0,
        };
        let s = generate(&SceneSpec::single_plane(48, 40, DisparityPlane::constant(5.0), motion, 4), 0).unwrap();
        let cfg = InitConfig {
            max_disp: 10,
            flow_radius: 3,
            ..Default::default()
        };
        let (a, ba) = init_state(&s.clip, &cfg).unwrap();
        let (b, bb) = init_state(&s.clip, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ba, bb);
        let expect = assemble_dchange(&a.d1, &a.d2, &a.flow, cfg.dchange_max);
        assert_eq!(a.dchange, expect);
    }
}
