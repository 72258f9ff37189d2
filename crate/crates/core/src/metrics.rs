//! End-point errors and KITTI-style outlier rates.
//!
//! A pixel is an outlier for a quantity when its error is at least 3 px *and*
//! at least 5% of the ground-truth magnitude; otherwise it counts as correct.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fields::{ImageField, Mask, SceneFlowState};
use crate::warp::{flow_coords, warp_by};

pub const OUTLIER_PX: f64 = 3.0;
/// Relative threshold in percent of the ground-truth magnitude.
pub const OUTLIER_PCT: f64 = 5.0;

pub const CSV_HEADER: &str = "step,epe_d1,epe_flow,epe_c,d1,d2,f1,sf,valid_px";

#[inline]
pub fn is_outlier(error: f64, gt_magnitude: f64) -> bool {
    error >= OUTLIER_PX && 100.0 * error >= OUTLIER_PCT * gt_magnitude
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub epe_d1: f64,
    pub epe_flow: f64,
    pub epe_dchange: f64,
    /// EPE of `D1 + C` against the second-frame disparity reference.
    pub epe_d2: f64,
    pub d1_out: f64,
    pub d2_out: f64,
    pub f1_out: f64,
    pub sf_out: f64,
    pub valid_px: usize,
}

impl MetricsReport {
    /// Unweighted mean over reports (each clip counts once).
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            epe_d1: avg(|r| r.epe_d1),
            epe_flow: avg(|r| r.epe_flow),
            epe_dchange: avg(|r| r.epe_dchange),
            epe_d2: avg(|r| r.epe_d2),
            d1_out: avg(|r| r.d1_out),
            d2_out: avg(|r| r.d2_out),
            f1_out: avg(|r| r.f1_out),
            sf_out: avg(|r| r.sf_out),
            valid_px: reports.iter().map(|r| r.valid_px).sum(),
        })
    }

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.epe_d1, self.epe_flow, self.epe_dchange, self.d1_out, self.d2_out, self.f1_out, self.sf_out, self.valid_px
        )
    }
}

fn check(pred: &ImageField, gt: &ImageField, valid: &Mask) -> Result<()> {
    gt.ensure_extent(pred.extent())?;
    gt.ensure_channels(pred.channels())?;
    if valid.extent() != pred.extent() {
        return Err(Error::ExtentMismatch {
            expected: pred.extent(),
            got: valid.extent(),
        });
    }
    Ok(())
}

/// Per-pixel Euclidean error norm across channels.
fn error_norm(pred: &ImageField, gt: &ImageField) -> Vec<f64> {
    let n = pred.pixel_count();
    let mut acc = vec![0.0; n];
    for c in 0..pred.channels() {
        for ((a, p), g) in acc.iter_mut().zip(pred.plane(c)).zip(gt.plane(c)) {
            *a += (p - g) * (p - g);
        }
    }
    acc.into_iter().map(f64::sqrt).collect()
}

fn magnitude(f: &ImageField) -> Vec<f64> {
    let zero = ImageField::zeros(f.width(), f.height(), f.channels());
    error_norm(f, &zero)
}

/// Mean error norm over valid pixels; `None` when no pixel is valid.
pub fn epe(pred: &ImageField, gt: &ImageField, valid: &Mask) -> Result<Option<f64>> {
    check(pred, gt, valid)?;
    let count = valid.count();
    if count == 0 {
        return Ok(None);
    }
    let sum: f64 = error_norm(pred, gt)
        .iter()
        .zip(valid.data())
        .filter(|(_, &v)| v)
        .map(|(e, _)| e)
        .sum();
    Ok(Some(sum / count as f64))
}

/// Ground-truth second-frame disparity seen from the first frame:
/// `D2*` sampled at `p + F*(p)`.
pub fn warped_gt_d2(gt: &SceneFlowState) -> ImageField {
    warp_by(&gt.d2, flow_coords(&gt.flow)).image
}

/// Per-pixel outlier flags `(d1, d2, f1)`; SF is their union.
pub fn outlier_masks(state: &SceneFlowState, gt: &SceneFlowState, gt_d2: &ImageField) -> Result<(Mask, Mask, Mask)> {
    let (w, h) = gt.extent();
    if state.extent() != (w, h) {
        return Err(Error::ExtentMismatch {
            expected: (w, h),
            got: state.extent(),
        });
    }
    gt_d2.ensure_extent((w, h))?;
    gt_d2.ensure_channels(1)?;
    let d1_err = error_norm(&state.d1, &gt.d1);
    let d1_mag = magnitude(&gt.d1);
    let flow_err = error_norm(&state.flow, &gt.flow);
    let flow_mag = magnitude(&gt.flow);
    let (d1, c, d2_ref) = (state.d1.plane(0), state.dchange.plane(0), gt_d2.plane(0));
    let m_d1 = Mask::from_fn(w, h, |x, y| {
        let i = y * w + x;
        is_outlier(d1_err[i], d1_mag[i])
    });
    let m_d2 = Mask::from_fn(w, h, |x, y| {
        let i = y * w + x;
        is_outlier((d1[i] + c[i] - d2_ref[i]).abs(), d2_ref[i].abs())
    });
    let m_f1 = Mask::from_fn(w, h, |x, y| {
        let i = y * w + x;
        is_outlier(flow_err[i], flow_mag[i])
    });
    Ok((m_d1, m_d2, m_f1))
}

/// Metrics with D2 judged against [`warped_gt_d2`].
pub fn outlier_rates(state: &SceneFlowState, gt: &SceneFlowState, valid: &Mask) -> Result<Option<MetricsReport>> {
    outlier_rates_with_d2(state, gt, &warped_gt_d2(gt), valid)
}

/// Metrics with an explicit first-frame reference for D2, as provided by
/// KITTI-format ground truth.
pub fn outlier_rates_with_d2(
    state: &SceneFlowState,
    gt: &SceneFlowState,
    gt_d2: &ImageField,
    valid: &Mask,
) -> Result<Option<MetricsReport>> {
    let (m_d1, m_d2, m_f1) = outlier_masks(state, gt, gt_d2)?;
    let Some(epe_d1) = epe(&state.d1, &gt.d1, valid)? else {
        return Ok(None);
    };
    let epe_flow = epe(&state.flow, &gt.flow, valid)?.unwrap_or(0.0);
    let epe_dchange = epe(&state.dchange, &gt.dchange, valid)?.unwrap_or(0.0);
    let mut d1_plus_c = state.d1.clone();
    for (v, c) in d1_plus_c.data_mut().iter_mut().zip(state.dchange.data()) {
        *v += c;
    }
    let epe_d2 = epe(&d1_plus_c, gt_d2, valid)?.unwrap_or(0.0);

    let count = valid.count();
    let rate = |m: &Mask| m.and(valid).count() as f64 / count as f64;
    let sf = Mask::from_fn(gt.width(), gt.height(), |x, y| m_d1.get(x, y) || m_d2.get(x, y) || m_f1.get(x, y));
    Ok(Some(MetricsReport {
        epe_d1,
        epe_flow,
        epe_dchange,
        epe_d2,
        d1_out: rate(&m_d1),
        d2_out: rate(&m_d2),
        f1_out: rate(&m_f1),
        sf_out: rate(&sf),
        valid_px: count,
    }))
}

/// One report per state, step 0 first. `None` when no pixel is valid.
pub fn trajectory_report(states: &[SceneFlowState], gt: &SceneFlowState, valid: &Mask) -> Result<Option<Vec<MetricsReport>>> {
    let gt_d2 = warped_gt_d2(gt);
    let mut rows = Vec::with_capacity(states.len());
    for s in states {
        match outlier_rates_with_d2(s, gt, &gt_d2, valid)? {
            Some(r) => rows.push(r),
            None => return Ok(None),
        }
    }
    Ok(Some(rows))
}

/// Writes the per-step table with [`CSV_HEADER`].
pub fn write_csv(out: &mut impl Write, rows: &[MetricsReport]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for (step, r) in rows.iter().enumerate() {
        writeln!(out, "{}", r.csv_row(step))?;
    }
    Ok(())
}

pub fn csv_string(rows: &[MetricsReport]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("ascii")
}
