//! Iterative refinement of a scene-flow state.
//!
//! Two strategies share one loop shape. Output descent moves the state along
//! `-∇_X L_cst` directly. The learned refiner is a three-layer 3×3 network
//! that maps `[X, loss map, gradient]` (11 channels) to an additive update
//! `ΔX`, applied recurrently:
//!
//! ```text
//! X^{t+1} = clamp(X^t + G(X^t, L(X^t), ∇L(X^t)))
//! ```

mod adam;
pub mod conv;
mod params;
mod train;

pub use adam::{adam_step, AdamState};
pub use params::{RefinerParams, DEFAULT_WIDTH, FULL_WIDTH};
pub use train::{clip_objective, train_from, train_refiner, TrainConfig, TrainMode, TrainReport, TrainingClip};

use crate::consistency::{LossBreakdown, LossParams, LossWeights};
use crate::error::{Error, Result};
use crate::fields::{pack_state, unpack_state, GradientField, ImageField, Mask, SceneFlowState, StereoClip, STATE_CHANNELS};
use crate::grad::consistency_gradient;

pub const INPUT_CHANNELS: usize = 11;
pub const OUTPUT_CHANNELS: usize = STATE_CHANNELS;

/// Concatenates `[state (5), loss map (1), gradient (5)]`.
pub fn refiner_input(state: &SceneFlowState, loss_map: &ImageField, grad: &GradientField) -> Result<ImageField> {
    loss_map.ensure_channels(1)?;
    ImageField::concat(&[&pack_state(state), loss_map, grad.as_field()])
}

/// Loss, gradient and network input at one state.
///
/// The gradient channels fed to the network are scaled by the pixel count,
/// undoing the `1/N` of the mean so they are O(1) per pixel at any image size.
pub struct StepFeatures {
    pub breakdown: LossBreakdown,
    pub grad: GradientField,
    pub input: ImageField,
}

pub fn step_features(
    clip: &StereoClip,
    state: &SceneFlowState,
    weights: &LossWeights,
    params: &LossParams,
) -> Result<StepFeatures> {
    let (grad, breakdown) = consistency_gradient(clip, state, weights, params)?;
    let mut scaled = grad.clone();
    let n = scaled.as_field().pixel_count() as f64;
    scaled.data_mut().iter_mut().for_each(|g| *g *= n);
    let input = refiner_input(state, &breakdown.total_map, &scaled)?;
    Ok(StepFeatures { breakdown, grad, input })
}

/// Post-ReLU hidden activations kept for the backward pass.
pub(crate) struct Activations {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

fn check_params(params: &RefinerParams, input: &ImageField) -> Result<()> {
    input.ensure_channels(INPUT_CHANNELS)?;
    if params.layers.len() != 3 || params.layers[0].in_channels != INPUT_CHANNELS || params.layers[2].out_channels != OUTPUT_CHANNELS {
        return Err(Error::InvalidArgument("refiner must be a 3-layer 11 -> w -> w -> 5 network".into()));
    }
    Ok(())
}

pub(crate) fn forward_cached(params: &RefinerParams, input: &ImageField) -> (Activations, Vec<f64>) {
    let (w, h) = input.extent();
    let mut a1 = params.layers[0].forward(input.data(), w, h);
    relu(&mut a1);
    let mut a2 = params.layers[1].forward(&a1, w, h);
    relu(&mut a2);
    let out = params.layers[2].forward(&a2, w, h);
    (Activations { a1, a2 }, out)
}

/// `ΔX = conv3(relu(conv2(relu(conv1(input)))))`, 5 channels.
pub fn refiner_forward(params: &RefinerParams, input: &ImageField) -> Result<ImageField> {
    check_params(params, input)?;
    let (w, h) = input.extent();
    let (_, out) = forward_cached(params, input);
    ImageField::from_vec(w, h, OUTPUT_CHANNELS, out)
}

pub(crate) fn backward_cached(
    params: &RefinerParams,
    input: &ImageField,
    acts: &Activations,
    upstream: &[f64],
    grads: &mut RefinerParams,
    need_input: bool,
) -> Option<Vec<f64>> {
    let (w, h) = input.extent();
    let mut g2 = params.layers[2]
        .backward(&acts.a2, upstream, w, h, &mut grads.layers[2], true)
        .expect("requested");
    g2.iter_mut().zip(&acts.a2).for_each(|(g, a)| {
        if *a <= 0.0 {
            *g = 0.0
        }
    });
    let mut g1 = params.layers[1]
        .backward(&acts.a1, &g2, w, h, &mut grads.layers[1], true)
        .expect("requested");
    g1.iter_mut().zip(&acts.a1).for_each(|(g, a)| {
        if *a <= 0.0 {
            *g = 0.0
        }
    });
    params.layers[0].backward(input.data(), &g1, w, h, &mut grads.layers[0], need_input)
}

/// Gradients of `<upstream, refiner_forward(params, input)>` with respect to
/// the parameters and the input.
pub fn refiner_backward(params: &RefinerParams, input: &ImageField, upstream: &ImageField) -> Result<(RefinerParams, ImageField)> {
    check_params(params, input)?;
    upstream.ensure_channels(OUTPUT_CHANNELS)?;
    upstream.ensure_extent(input.extent())?;
    let (w, h) = input.extent();
    let (acts, _) = forward_cached(params, input);
    let mut grads = params.zeros_like();
    let gin = backward_cached(params, input, &acts, upstream.data(), &mut grads, true).expect("requested");
    Ok((grads, ImageField::from_vec(w, h, INPUT_CHANNELS, gin)?))
}

/// `clamp(X + ΔX)`. Entries with a zero update are left untouched.
pub fn apply_update(state: &SceneFlowState, delta: &ImageField) -> Result<SceneFlowState> {
    delta.ensure_channels(STATE_CHANNELS)?;
    delta.ensure_extent(state.extent())?;
    let mut packed = pack_state(state);
    for (x, d) in packed.data_mut().iter_mut().zip(delta.data()) {
        if *d != 0.0 {
            *x += d;
        }
    }
    if !packed.is_finite() {
        return Err(Error::InvalidField("update produced a non-finite state".into()));
    }
    unpack_state(&packed)
}

#[derive(Clone, Debug)]
pub struct RefineTrajectory {
    /// `X^0 .. X^T`.
    pub states: Vec<SceneFlowState>,
    /// Consistency loss at each state, same length as `states`.
    pub losses: Vec<LossBreakdown>,
}

impl RefineTrajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &SceneFlowState {
        self.states.last().expect("trajectory holds X^0")
    }

    pub fn totals(&self) -> Vec<f64> {
        self.losses.iter().map(|b| b.total).collect()
    }
}

/// Runs `steps` learned refinement steps from `x0`.
pub fn refine_iterate(
    clip: &StereoClip,
    x0: &SceneFlowState,
    params: &RefinerParams,
    steps: usize,
    weights: &LossWeights,
    loss_params: &LossParams,
) -> Result<RefineTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidArgument("refinement needs at least one step".into()));
    }
    let mut states = vec![x0.clone()];
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let x = states.last().expect("non-empty");
        let f = step_features(clip, x, weights, loss_params)?;
        let delta = refiner_forward(params, &f.input)?;
        let next = apply_update(x, &delta)?;
        losses.push(f.breakdown);
        states.push(next);
    }
    losses.push(crate::consistency::total_loss(clip, states.last().expect("non-empty"), weights, loss_params)?);
    Ok(RefineTrajectory { states, losses })
}

/// `clamp(X - lr ∇_X L_cst)`.
pub fn descent_step(
    clip: &StereoClip,
    state: &SceneFlowState,
    lr: f64,
    weights: &LossWeights,
    params: &LossParams,
) -> Result<SceneFlowState> {
    let (grad, _) = consistency_gradient(clip, state, weights, params)?;
    descend(state, &grad, lr)
}

fn descend(state: &SceneFlowState, grad: &GradientField, lr: f64) -> Result<SceneFlowState> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {lr}")));
    }
    let delta = grad.as_field().map(|g| -lr * g);
    apply_update(state, &delta)
}

/// `steps` output-descent steps from `x0`, recording the loss at every state.
pub fn descent(
    clip: &StereoClip,
    x0: &SceneFlowState,
    lr: f64,
    steps: usize,
    weights: &LossWeights,
    params: &LossParams,
) -> Result<RefineTrajectory> {
    let mut states = vec![x0.clone()];
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let x = states.last().expect("non-empty");
        let (grad, breakdown) = consistency_gradient(clip, x, weights, params)?;
        let next = descend(x, &grad, lr)?;
        losses.push(breakdown);
        states.push(next);
    }
    losses.push(crate::consistency::total_loss(clip, states.last().expect("non-empty"), weights, params)?);
    Ok(RefineTrajectory { states, losses })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SupervisedLoss {
    pub total: f64,
    pub flow: f64,
    pub d1: f64,
    pub dchange: f64,
    /// Zero unless D2 supervision is enabled.
    pub d2: f64,
}

/// Mean over valid pixels of `‖F − F*‖ + |D1 − D1*| + |C − C*|`.
pub fn supervised_loss(state: &SceneFlowState, gt: &SceneFlowState, valid: &Mask) -> Result<SupervisedLoss> {
    Ok(supervised(state, gt, valid, false, false)?.0)
}

/// As [`supervised_loss`], optionally adding `|D2 − D2*|`, with the gradient.
pub fn supervised_gradient(
    state: &SceneFlowState,
    gt: &SceneFlowState,
    valid: &Mask,
    supervise_d2: bool,
) -> Result<(SupervisedLoss, GradientField)> {
    let (loss, grad) = supervised(state, gt, valid, supervise_d2, true)?;
    Ok((loss, grad.expect("requested")))
}

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

fn supervised(
    state: &SceneFlowState,
    gt: &SceneFlowState,
    valid: &Mask,
    supervise_d2: bool,
    want_grad: bool,
) -> Result<(SupervisedLoss, Option<GradientField>)> {
    let (w, h) = gt.extent();
    if state.extent() != (w, h) || valid.extent() != (w, h) {
        return Err(Error::ExtentMismatch {
            expected: (w, h),
            got: if state.extent() != (w, h) { state.extent() } else { valid.extent() },
        });
    }
    let count = valid.count();
    let mut grad = want_grad.then(|| GradientField::zeros(w, h));
    if count == 0 {
        log::warn!("supervised loss over an empty mask is 0");
        return Ok((SupervisedLoss::default(), grad));
    }
    let inv = 1.0 / count as f64;
    let mut loss = SupervisedLoss::default();
    let (fx, fy) = (state.flow.plane(0), state.flow.plane(1));
    let (gx, gy) = (gt.flow.plane(0), gt.flow.plane(1));
    let (d1, gd1) = (state.d1.plane(0), gt.d1.plane(0));
    let (d2, gd2) = (state.d2.plane(0), gt.d2.plane(0));
    let (c, gc) = (state.dchange.plane(0), gt.dchange.plane(0));
    let mut g_out = vec![[0.0; STATE_CHANNELS]; if want_grad { w * h } else { 0 }];
    for (i, &v) in valid.data().iter().enumerate() {
        if !v {
            continue;
        }
        let (ex, ey) = (fx[i] - gx[i], fy[i] - gy[i]);
        let norm = (ex * ex + ey * ey).sqrt();
        let (e1, e2, ec) = (d1[i] - gd1[i], d2[i] - gd2[i], c[i] - gc[i]);
        loss.flow += norm;
        loss.d1 += e1.abs();
        loss.dchange += ec.abs();
        if supervise_d2 {
            loss.d2 += e2.abs();
        }
        if want_grad {
            let (nx, ny) = if norm > 0.0 { (ex / norm, ey / norm) } else { (0.0, 0.0) };
            let d2g = if supervise_d2 { sign(e2) } else { 0.0 };
            g_out[i] = [sign(e1) * inv, d2g * inv, nx * inv, ny * inv, sign(ec) * inv];
        }
    }
    loss.flow *= inv;
    loss.d1 *= inv;
    loss.dchange *= inv;
    loss.d2 *= inv;
    loss.total = loss.flow + loss.d1 + loss.dchange + loss.d2;
    if let Some(g) = grad.as_mut() {
        for ch in 0..STATE_CHANNELS {
            let dst = g.channel_mut(ch);
            for (d, src) in dst.iter_mut().zip(&g_out) {
                *d = src[ch];
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_is_state_then_loss_then_gradient() {
        let s = SceneFlowState::constant(3, 2, 4.0, 5.0, (1.0, -1.0), 1.0);
        let input = refiner_input(&s, &ImageField::zeros(3, 2, 1), &GradientField::zeros(3, 2)).unwrap();
        assert_eq!(input.channels(), INPUT_CHANNELS);
        assert!(input.data()[5 * 6..].iter().all(|&v| v == 0.0));
        let first = ImageField::from_vec(3, 2, 5, input.data()[..5 * 6].to_vec()).unwrap();
        assert_eq!(unpack_state(&first).unwrap(), s);
    }

    #[test]
    fn supervised_loss_three_four_five() {
        let gt = SceneFlowState::constant(4, 5, 3.0, 3.0, (0.0, 0.0), 0.0);
        let mut s = gt.clone();
        s.flow.set(0, 1, 1, 3.0);
        s.flow.set(1, 1, 1, 4.0);
        let l = supervised_loss(&s, &gt, &Mask::filled(4, 5, true)).unwrap();
        assert_eq!(l.total, 5.0 / 20.0);
        assert_eq!(supervised_loss(&gt, &gt, &Mask::filled(4, 5, true)).unwrap().total, 0.0);
        assert_eq!(supervised_loss(&s, &gt, &Mask::filled(4, 5, false)).unwrap().total, 0.0);
    }

    #[test]
    fn bias_gradient_is_upstream_sum() {
        let p = RefinerParams::init(4, 2);
        let input = ImageField::from_fn(4, 3, INPUT_CHANNELS, |c, x, y| ((c + 2 * x + 3 * y) as f64 * 0.37).sin());
        let up = ImageField::from_fn(4, 3, OUTPUT_CHANNELS, |c, x, y| ((c * 5 + x + y) as f64 * 0.21).cos());
        let (g, _) = refiner_backward(&p, &input, &up).unwrap();
        for k in 0..OUTPUT_CHANNELS {
            let s: f64 = up.plane(k).iter().sum();
            assert!((g.layers[2].bias[k] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_final_layer_is_identity() {
        let p = RefinerParams::init(4, 9);
        let input = ImageField::from_fn(5, 4, INPUT_CHANNELS, |c, x, y| (c * x + y) as f64);
        let delta = refiner_forward(&p, &input).unwrap();
        assert!(delta.data().iter().all(|&v| v == 0.0));
    }
}
