//! Training the refiner on `Σ_{t=0..T} L(X^t)`.
//!
//! Gradients flow back through the state path `X^t → X^{t+1}` and through
//! the network; the loss-map and gradient input channels are treated as
//! constant features of each step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    backward_cached, forward_cached, step_features, supervised_gradient, AdamState, RefinerParams, OUTPUT_CHANNELS,
};
use crate::consistency::{LossParams, LossWeights};
use crate::error::{Error, Result};
use crate::fields::{pack_state, unpack_state, GradientField, Mask, SceneFlowState, StereoClip, CH_D1, CH_D2};
use crate::grad::consistency_gradient;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Per-step loss is the supervised L1 loss against ground truth.
    Supervised,
    /// Per-step loss is the consistency loss; ground truth is never read.
    SelfSupervised,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sup" => Ok(TrainMode::Supervised),
            "selfsup" => Ok(TrainMode::SelfSupervised),
            other => Err(format!("unknown training mode `{other}` (expected sup or selfsup)")),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Supervised => "sup",
            TrainMode::SelfSupervised => "selfsup",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Refinement steps `T` per clip.
    pub steps: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub width: usize,
    pub mode: TrainMode,
    pub seed: u64,
    /// Adds `|D2 − D2*|` to the supervised loss.
    pub supervise_d2: bool,
    pub weights: LossWeights,
    pub loss: LossParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            epochs: 1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            width: super::DEFAULT_WIDTH,
            mode: TrainMode::Supervised,
            seed: 0,
            supervise_d2: false,
            weights: LossWeights::default(),
            loss: LossParams::default(),
        }
    }
}

/// One training example: the clip (with backward flow), its starting state,
/// and ground truth when available.
#[derive(Clone, Debug)]
pub struct TrainingClip {
    pub clip: StereoClip,
    pub x0: SceneFlowState,
    pub gt: Option<SceneFlowState>,
    pub valid: Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean objective over the clips of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Per-step loss and its gradient with respect to the state.
fn step_loss(item: &TrainingClip, state: &SceneFlowState, cfg: &TrainConfig, cached: Option<(f64, &GradientField)>) -> Result<(f64, GradientField)> {
    match cfg.mode {
        TrainMode::Supervised => {
            let gt = item
                .gt
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("supervised training needs ground truth".into()))?;
            let (l, g) = supervised_gradient(state, gt, &item.valid, cfg.supervise_d2)?;
            Ok((l.total, g))
        }
        TrainMode::SelfSupervised => match cached {
            Some((l, g)) => Ok((l, g.clone())),
            None => {
                let (g, b) = consistency_gradient(&item.clip, state, &cfg.weights, &cfg.loss)?;
                Ok((b.total, g))
            }
        },
    }
}

/// `Σ_{t=0..T} L(X^t)` for one clip and its gradient with respect to the
/// refiner parameters (accumulated into `grads`).
pub fn clip_objective(params: &RefinerParams, item: &TrainingClip, cfg: &TrainConfig, grads: Option<&mut RefinerParams>) -> Result<f64> {
    let (w, h) = item.x0.extent();
    let n = w * h;
    let mut state = item.x0.clone();
    let mut inputs = Vec::with_capacity(cfg.steps);
    let mut acts = Vec::with_capacity(cfg.steps);
    let mut unclamped = Vec::with_capacity(cfg.steps);
    let mut step_grads = Vec::with_capacity(cfg.steps + 1);
    let mut objective = 0.0;

    for _ in 0..cfg.steps {
        let f = step_features(&item.clip, &state, &cfg.weights, &cfg.loss)?;
        let (l, g) = step_loss(item, &state, cfg, Some((f.breakdown.total, &f.grad)))?;
        objective += l;
        step_grads.push(g);
        let (a, out) = forward_cached(params, &f.input);
        let mut packed = pack_state(&state);
        let mut keep = vec![true; 2 * n];
        for (k, (x, d)) in packed.data_mut().iter_mut().zip(&out).enumerate() {
            if *d != 0.0 {
                *x += d;
            }
            let ch = k / n;
            if (ch == CH_D1 || ch == CH_D2) && *x < 0.0 {
                keep[(ch - CH_D1) * n + k % n] = false;
            }
        }
        if !packed.is_finite() {
            return Ok(f64::NAN);
        }
        state = unpack_state(&packed)?;
        inputs.push(f.input);
        acts.push(a);
        unclamped.push(keep);
    }
    let (l, g) = step_loss(item, &state, cfg, None)?;
    objective += l;
    step_grads.push(g);

    let Some(grads) = grads else {
        return Ok(objective);
    };
    if !objective.is_finite() {
        return Ok(objective);
    }
    let mut carry: Vec<f64> = step_grads[cfg.steps].data().to_vec();
    for t in (0..cfg.steps).rev() {
        for (k, keep) in unclamped[t].iter().enumerate() {
            if !keep {
                carry[CH_D1 * n + k] = 0.0;
            }
        }
        let gin = backward_cached(params, &inputs[t], &acts[t], &carry, grads, t > 0).unwrap_or_default();
        for (k, c) in carry.iter_mut().enumerate() {
            *c += step_grads[t].data()[k] + gin.get(k).copied().unwrap_or(0.0);
        }
    }
    debug_assert_eq!(carry.len(), OUTPUT_CHANNELS * n);
    Ok(objective)
}

/// Trains a freshly initialized refiner. Clips are visited in a seeded
/// shuffled order each epoch, with one Adam update per clip.
pub fn train_refiner(dataset: &[TrainingClip], cfg: &TrainConfig) -> Result<(RefinerParams, TrainReport)> {
    let params = RefinerParams::init(cfg.width, cfg.seed);
    train_from(params, dataset, cfg)
}

/// As [`train_refiner`], continuing from existing parameters.
pub fn train_from(mut params: RefinerParams, dataset: &[TrainingClip], cfg: &TrainConfig) -> Result<(RefinerParams, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("training needs at least one refinement step".into()));
    }
    cfg.loss.validate()?;
    let mut adam = AdamState::new(params.param_count(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport { epoch_losses: Vec::with_capacity(cfg.epochs) };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let mut grads = params.zeros_like();
            let loss = clip_objective(&params, &dataset[i], cfg, Some(&mut grads))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, clip: i, loss });
            }
            adam.update(&mut params, &grads);
            sum += loss;
        }
        let mean = sum / dataset.len() as f64;
        log::info!("epoch {epoch}: mean objective {mean:.6}");
        report.epoch_losses.push(mean);
    }
    Ok((params, report))
}
