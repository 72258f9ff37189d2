//! Analytic gradient of the consistency loss with respect to the five
//! scene-flow channels, and a central-difference oracle to check it.
//!
//! Occlusion decisions and in-bounds flags are piecewise constant and are
//! held fixed; the subgradient of `|u|` at zero is zero.

use crate::consistency::{evaluate, photometric_vjp, LossBreakdown, LossParams, LossWeights};
use crate::error::{Error, Result};
use crate::fields::{
    GradientField, ImageField, SceneFlowState, StereoClip, CH_D1, CH_D2, CH_DCHANGE, CH_FLOW_X, CH_FLOW_Y,
    STATE_CHANNELS,
};
use crate::warp::Warped;

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `∂ total / ∂X` together with the loss it differentiates.
pub fn consistency_gradient(
    clip: &StereoClip,
    state: &SceneFlowState,
    weights: &LossWeights,
    params: &LossParams,
) -> Result<(GradientField, LossBreakdown)> {
    let ev = evaluate(clip, state, weights, params)?;
    let (w, h) = state.extent();
    let n = w * h;
    let mut grad = GradientField::zeros(w, h);
    let pp = &params.photometric;
    let mask = ev.breakdown.occlusion.data();

    if weights.stereo != 0.0 {
        for (target, warp, ch) in [(&clip.l1, &ev.r1_warp, CH_D1), (&clip.l2, &ev.r2_warp, CH_D2)] {
            let scale = 0.5 * weights.stereo / warp.valid.count().max(1) as f64;
            let upstream: Vec<f64> = warp.valid.data().iter().map(|&v| if v { scale } else { 0.0 }).collect();
            let gb = photometric_vjp(target, &warp.image, pp, &upstream);
            let out = grad.channel_mut(ch);
            // the sample sits at x - d, so ∂/∂d = -∂/∂x
            for c in 0..gb.channels() {
                for (o, (g, dx)) in out.iter_mut().zip(gb.plane(c).iter().zip(warp.d_dx.plane(c))) {
                    *o -= g * dx;
                }
            }
        }
    }

    if weights.flow != 0.0 {
        let warp = &ev.l2_warp;
        let scale = weights.flow / warp.valid.count().max(1) as f64;
        let upstream: Vec<f64> = warp
            .valid
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if v && m { scale } else { 0.0 })
            .collect();
        let gb = photometric_vjp(&clip.l1, &warp.image, pp, &upstream);
        accumulate_flow(&mut grad, &gb, warp, 1.0);
    }

    if weights.disparity_flow != 0.0 {
        let warp = &ev.d2_warp;
        let scale = weights.disparity_flow / warp.valid.count().max(1) as f64;
        let residual = ev.residual.plane(0);
        let mut g = vec![0.0; n];
        for i in 0..n {
            if warp.valid.data()[i] && mask[i] {
                g[i] = scale * sign(residual[i]);
            }
        }
        for (o, gi) in grad.channel_mut(CH_D1).iter_mut().zip(&g) {
            *o += gi;
        }
        for (o, gi) in grad.channel_mut(CH_DCHANGE).iter_mut().zip(&g) {
            *o += gi;
        }
        let gfield = ImageField::from_vec(w, h, 1, g.clone())?;
        accumulate_flow(&mut grad, &gfield, warp, -1.0);
        let d2 = grad.channel_mut(CH_D2);
        for (fp, gi) in warp.footprints.iter().zip(&g) {
            if *gi != 0.0 {
                fp.scatter(d2, -gi);
            }
        }
    }

    if weights.smooth != 0.0 {
        let scale = weights.smooth / n as f64;
        let [g1, g2] = &ev.smooth_weights;
        smoothness_grad(&state.d1, g1, scale, &mut grad, &[CH_D1]);
        smoothness_grad(&state.d2, g2, scale, &mut grad, &[CH_D2]);
        smoothness_grad(&state.flow, g1, scale, &mut grad, &[CH_FLOW_X, CH_FLOW_Y]);
        smoothness_grad(&state.dchange, g1, scale, &mut grad, &[CH_DCHANGE]);
    }

    Ok((grad, ev.breakdown))
}

/// Chain rule through a flow-driven sample: `∂/∂F = g · ∇(sampled source)`.
fn accumulate_flow(grad: &mut GradientField, g: &ImageField, warp: &Warped, sign: f64) {
    for c in 0..g.channels() {
        let gp = g.plane(c);
        let (dx, dy) = (warp.d_dx.plane(c), warp.d_dy.plane(c));
        for (o, (gi, d)) in grad.channel_mut(CH_FLOW_X).iter_mut().zip(gp.iter().zip(dx)) {
            *o += sign * gi * d;
        }
        for (o, (gi, d)) in grad.channel_mut(CH_FLOW_Y).iter_mut().zip(gp.iter().zip(dy)) {
            *o += sign * gi * d;
        }
    }
}

fn smoothness_grad(
    field: &ImageField,
    guide: &(Vec<f64>, Vec<f64>),
    scale: f64,
    grad: &mut GradientField,
    channels: &[usize],
) {
    let (w, h) = field.extent();
    let k = scale / field.channels() as f64;
    let (wx, wy) = guide;
    for (c, &ch) in channels.iter().enumerate() {
        let p = field.plane(c);
        let out = grad.channel_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let g = k * wx[i] * sign(p[i + 1] - p[i]);
                    out[i + 1] += g;
                    out[i] -= g;
                }
                if y + 1 < h {
                    let g = k * wy[i] * sign(p[i + w] - p[i]);
                    out[i + w] += g;
                    out[i] -= g;
                }
            }
        }
    }
}

/// One coordinate of a finite-difference probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdProbe {
    pub central: f64,
    pub forward: f64,
    pub backward: f64,
}

fn perturbed(state: &SceneFlowState, channel: usize, index: usize, delta: f64) -> SceneFlowState {
    let mut s = state.clone();
    let target = match channel {
        CH_D1 => &mut s.d1.data_mut()[index],
        CH_D2 => &mut s.d2.data_mut()[index],
        CH_FLOW_X => &mut s.flow.plane_mut(0)[index],
        CH_FLOW_Y => &mut s.flow.plane_mut(1)[index],
        _ => &mut s.dchange.data_mut()[index],
    };
    *target += delta;
    s
}

/// Central, forward and backward differences of the total loss for every
/// channel and pixel. Costs `2 * 5 * W * H + 1` loss evaluations.
pub fn finite_difference_probe(
    clip: &StereoClip,
    state: &SceneFlowState,
    weights: &LossWeights,
    params: &LossParams,
    eps: f64,
) -> Result<Vec<FdProbe>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let base = evaluate(clip, state, weights, params)?.breakdown.total;
    let n = state.width() * state.height();
    let mut out = Vec::with_capacity(STATE_CHANNELS * n);
    for ch in 0..STATE_CHANNELS {
        for i in 0..n {
            let plus = evaluate(clip, &perturbed(state, ch, i, eps), weights, params)?.breakdown.total;
            let minus = evaluate(clip, &perturbed(state, ch, i, -eps), weights, params)?.breakdown.total;
            out.push(FdProbe {
                central: (plus - minus) / (2.0 * eps),
                forward: (plus - base) / eps,
                backward: (base - minus) / eps,
            });
        }
    }
    Ok(out)
}

/// Central-difference gradient of the total loss, channel by channel.
/// Intended for small images only.
pub fn finite_difference_gradient(
    clip: &StereoClip,
    state: &SceneFlowState,
    weights: &LossWeights,
    params: &LossParams,
    eps: f64,
) -> Result<GradientField> {
    let probes = finite_difference_probe(clip, state, weights, params, eps)?;
    let (w, h) = state.extent();
    GradientField::from_field(ImageField::from_vec(w, h, STATE_CHANNELS, probes.iter().map(|p| p.central).collect())?)
}
