//! Photometric error: a blend of windowed SSIM dissimilarity and absolute
//! difference, with its vector-Jacobian product for the reverse pass.
//!
//! SSIM statistics are box means over an odd square window truncated at the
//! image border, so every window only contains real pixels.

use crate::error::{Error, Result};
use crate::fields::ImageField;
use crate::filter::box_sum;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricParams {
    /// Weight of the SSIM term; `1 - alpha_ssim` goes to the L1 term.
    pub alpha_ssim: f64,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self {
            alpha_ssim: 0.85,
            ssim_window: 3,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl PhotometricParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_ssim) {
            return Err(Error::InvalidArgument(format!(
                "alpha_ssim must lie in [0, 1], got {}",
                self.alpha_ssim
            )));
        }
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "ssim_window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if self.ssim_c1 < 0.0 || self.ssim_c2 < 0.0 {
            return Err(Error::InvalidArgument("SSIM constants must be non-negative".into()));
        }
        Ok(())
    }

    fn radius(&self) -> usize {
        self.ssim_window / 2
    }
}

fn window_counts(w: usize, h: usize, r: usize) -> Vec<f64> {
    let span = |i: usize, n: usize| ((i + r).min(n - 1) - i.saturating_sub(r) + 1) as f64;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(span(x, w) * span(y, h));
        }
    }
    out
}

/// Windowed statistics of one channel pair.
struct Stats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    s_aa: Vec<f64>,
    s_bb: Vec<f64>,
    s_ab: Vec<f64>,
    count: Vec<f64>,
}

fn stats(a: &[f64], b: &[f64], w: usize, h: usize, r: usize) -> Stats {
    let count = window_counts(w, h, r);
    let mean = |v: Vec<f64>| -> Vec<f64> { box_sum(&v, w, h, r).iter().zip(&count).map(|(s, n)| s / n).collect() };
    let mu_a = mean(a.to_vec());
    let mu_b = mean(b.to_vec());
    let m_aa = mean(a.iter().map(|v| v * v).collect());
    let m_bb = mean(b.iter().map(|v| v * v).collect());
    let m_ab = mean(a.iter().zip(b).map(|(p, q)| p * q).collect());
    let n = w * h;
    let mut s_aa = Vec::with_capacity(n);
    let mut s_bb = Vec::with_capacity(n);
    let mut s_ab = Vec::with_capacity(n);
    for i in 0..n {
        s_aa.push(m_aa[i] - mu_a[i] * mu_a[i]);
        s_bb.push(m_bb[i] - mu_b[i] * mu_b[i]);
        s_ab.push(m_ab[i] - mu_a[i] * mu_b[i]);
    }
    Stats {
        mu_a,
        mu_b,
        s_aa,
        s_bb,
        s_ab,
        count,
    }
}

fn check_pair(a: &ImageField, b: &ImageField) -> Result<()> {
    b.ensure_extent(a.extent())?;
    b.ensure_channels(a.channels())?;
    Ok(())
}

/// Per-pixel photometric error between `a` and `b`, averaged over channels.
pub fn photometric_error(a: &ImageField, b: &ImageField, params: &PhotometricParams) -> Result<ImageField> {
    check_pair(a, b)?;
    params.validate()?;
    let (w, h) = a.extent();
    let channels = a.channels();
    let alpha = params.alpha_ssim;
    let (c1, c2) = (params.ssim_c1, params.ssim_c2);
    let mut out = ImageField::zeros(w, h, 1);
    let inv_c = 1.0 / channels as f64;
    for c in 0..channels {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let st = stats(pa, pb, w, h, params.radius());
        let dst = out.plane_mut(0);
        for i in 0..w * h {
            let num = (2.0 * st.mu_a[i] * st.mu_b[i] + c1) * (2.0 * st.s_ab[i] + c2);
            let den = (st.mu_a[i] * st.mu_a[i] + st.mu_b[i] * st.mu_b[i] + c1) * (st.s_aa[i] + st.s_bb[i] + c2);
            let ssim = if den > 0.0 { num / den } else { 1.0 };
            let dssim = (0.5 * (1.0 - ssim)).max(0.0);
            dst[i] += inv_c * (alpha * dssim + (1.0 - alpha) * (pa[i] - pb[i]).abs());
        }
    }
    Ok(out)
}

/// Given `upstream[p] = ∂L/∂pe(p)`, returns `∂L/∂b` per channel (`a` held fixed).
pub(crate) fn photometric_vjp(
    a: &ImageField,
    b: &ImageField,
    params: &PhotometricParams,
    upstream: &[f64],
) -> ImageField {
    let (w, h) = a.extent();
    let n = w * h;
    let channels = a.channels();
    let alpha = params.alpha_ssim;
    let (c1, c2) = (params.ssim_c1, params.ssim_c2);
    let r = params.radius();
    let inv_c = 1.0 / channels as f64;
    let mut grad = ImageField::zeros(w, h, channels);
    let mut k_const = vec![0.0; n];
    let mut k_b = vec![0.0; n];
    let mut k_a = vec![0.0; n];
    for c in 0..channels {
        let (pa, pb) = (a.plane(c), b.plane(c));
        let st = stats(pa, pb, w, h, r);
        let g_out = grad.plane_mut(c);
        for i in 0..n {
            let g = upstream[i] * inv_c;
            if g == 0.0 {
                k_const[i] = 0.0;
                k_b[i] = 0.0;
                k_a[i] = 0.0;
                continue;
            }
            // L1 term
            let diff = pb[i] - pa[i];
            if diff > 0.0 {
                g_out[i] += g * (1.0 - alpha);
            } else if diff < 0.0 {
                g_out[i] -= g * (1.0 - alpha);
            }
            // SSIM = (A B) / (P Q)
            let (mu_a, mu_b) = (st.mu_a[i], st.mu_b[i]);
            let big_a = 2.0 * mu_a * mu_b + c1;
            let big_b = 2.0 * st.s_ab[i] + c2;
            let big_p = mu_a * mu_a + mu_b * mu_b + c1;
            let big_q = st.s_aa[i] + st.s_bb[i] + c2;
            let den = big_p * big_q;
            if den <= 0.0 {
                k_const[i] = 0.0;
                k_b[i] = 0.0;
                k_a[i] = 0.0;
                continue;
            }
            let ssim = big_a * big_b / den;
            let d_mu_b = 2.0 * mu_a * big_b / den - ssim * 2.0 * mu_b / big_p;
            let d_s_bb = -ssim / big_q;
            let d_s_ab = 2.0 * big_a / den;
            // ∂pe/∂SSIM = -alpha/2; moments depend on b_q through
            // μb' = 1/n, s_bb' = 2(b_q - μb)/n, s_ab' = (a_q - μa)/n.
            let coef = -0.5 * alpha * g / st.count[i];
            k_const[i] = coef * (d_mu_b - 2.0 * d_s_bb * mu_b - d_s_ab * mu_a);
            k_b[i] = coef * 2.0 * d_s_bb;
            k_a[i] = coef * d_s_ab;
        }
        // Window membership is symmetric, so the scatter is another box sum.
        let s_const = box_sum(&k_const, w, h, r);
        let s_b = box_sum(&k_b, w, h, r);
        let s_a = box_sum(&k_a, w, h, r);
        for i in 0..n {
            g_out[i] += s_const[i] + s_b[i] * pb[i] + s_a[i] * pa[i];
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, phase: f64) -> ImageField {
        ImageField::from_fn(w, h, 1, |_, x, y| {
            0.5 + 0.3 * (0.7 * x as f64 + phase).sin() * (0.4 * y as f64 - phase).cos()
        })
    }

    #[test]
    fn identical_images_have_zero_error() {
        let a = textured(9, 7, 0.3);
        let pe = photometric_error(&a, &a, &PhotometricParams::default()).unwrap();
        assert!(pe.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_images_match_closed_form() {
        // μa = 0, μb = 1, zero variances: SSIM = c1 / (1 + c1).
        let p = PhotometricParams::default();
        let a = ImageField::zeros(5, 4, 1);
        let b = ImageField::filled(5, 4, 1, 1.0);
        let pe = photometric_error(&a, &b, &p).unwrap();
        let ssim = p.ssim_c1 / (1.0 + p.ssim_c1);
        let expect = p.alpha_ssim * (1.0 - ssim) / 2.0 + (1.0 - p.alpha_ssim);
        for &v in pe.data() {
            assert!((v - expect).abs() < 1e-15, "{v} vs {expect}");
        }
    }

    #[test]
    fn alpha_zero_is_mean_absolute_difference() {
        let p = PhotometricParams {
            alpha_ssim: 0.0,
            ..Default::default()
        };
        let a = ImageField::from_fn(4, 3, 3, |c, x, y| (c + x + y) as f64 * 0.1);
        let b = ImageField::from_fn(4, 3, 3, |c, x, y| (c * x + y) as f64 * 0.07);
        let pe = photometric_error(&a, &b, &p).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let expect = (0..3).map(|c| (a.get(c, x, y) - b.get(c, x, y)).abs()).sum::<f64>() / 3.0;
                assert!((pe.get(0, x, y) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn error_is_bounded_for_unit_range_inputs() {
        let p = PhotometricParams::default();
        let a = textured(12, 10, 0.0);
        let b = textured(12, 10, 1.7);
        let pe = photometric_error(&a, &b, &p).unwrap();
        assert!(pe.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn extent_mismatch_rejected() {
        let p = PhotometricParams::default();
        assert!(photometric_error(&ImageField::zeros(3, 3, 1), &ImageField::zeros(3, 4, 1), &p).is_err());
        assert!(photometric_error(&ImageField::zeros(3, 3, 1), &ImageField::zeros(3, 3, 3), &p).is_err());
    }

    #[test]
    fn box_sum_counts_truncated_windows() {
        let ones = vec![1.0; 20];
        let s = box_sum(&ones, 5, 4, 1);
        assert_eq!(s, window_counts(5, 4, 1));
        assert_eq!(box_sum(&ones, 5, 4, 2), window_counts(5, 4, 2));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let p = PhotometricParams::default();
        let a = ImageField::from_fn(6, 5, 2, |c, x, y| 0.5 + 0.3 * ((x * 3 + y * 5 + c) as f64 * 0.9).sin());
        let b = ImageField::from_fn(6, 5, 2, |c, x, y| 0.45 + 0.25 * ((x * 2 + y * 7 + 2 * c) as f64 * 0.6).cos());
        let up: Vec<f64> = (0..30).map(|i| 0.5 + (i as f64 * 0.37).sin()).collect();
        let loss = |b: &ImageField| -> f64 {
            photometric_error(&a, b, &p).unwrap().data().iter().zip(&up).map(|(e, u)| e * u).sum()
        };
        let g = photometric_vjp(&a, &b, &p, &up);
        let eps = 1e-6;
        for k in 0..b.data().len() {
            let mut bp = b.clone();
            bp.data_mut()[k] += eps;
            let mut bm = b.clone();
            bm.data_mut()[k] -= eps;
            let fd = (loss(&bp) - loss(&bm)) / (2.0 * eps);
            let an = g.data()[k];
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "k={k} fd={fd} an={an}");
        }
    }
}
