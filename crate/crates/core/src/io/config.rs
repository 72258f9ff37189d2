//! Run configuration: one `key = value` per line, `#` starts a comment.
//! Unknown keys are rejected; anything not given keeps its default.
//!
//! | key | default |
//! |-----|---------|
//! | `omega_pd`, `omega_pf`, `omega_df`, `omega_s` | 1, 1, 1, 0.1 |
//! | `w1`, `w2` | 0.01, 0.05 |
//! | `alpha_ssim`, `ssim_window`, `ssim_c1`, `ssim_c2` | 0.85, 3, 1e-4, 9e-4 |
//! | `steps` | 5 |
//! | `lr`, `beta1`, `beta2`, `adam_eps` | 1e-4, 0.9, 0.999, 1e-8 |
//! | `width`, `mode`, `seed`, `epochs`, `supervise_d2` | 32, sup, 0, 1, false |
//! | `descent_lr` | 2000 |
//! | `max_disp`, `patch`, `flow_radius`, `pyramid_levels`, `dchange_max` | 40, 5, 8, 1, 8 |

use std::path::Path;
use std::str::FromStr;

use super::read_bytes;
use crate::error::{Error, Result};
use crate::initializer::InitConfig;
use crate::refiner::{TrainConfig, TrainMode};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Refinement steps, loss weights and parameters, and training settings.
    pub train: TrainConfig,
    pub init: InitConfig,
    /// Step size of output descent.
    pub descent_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            init: InitConfig::default(),
            descent_lr: 2000.0,
        }
    }
}

const KEYS: &[&str] = &[
    "omega_pd",
    "omega_pf",
    "omega_df",
    "omega_s",
    "w1",
    "w2",
    "alpha_ssim",
    "ssim_window",
    "ssim_c1",
    "ssim_c2",
    "steps",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "width",
    "mode",
    "seed",
    "epochs",
    "supervise_d2",
    "descent_lr",
    "max_disp",
    "patch",
    "flow_radius",
    "pyramid_levels",
    "dchange_max",
];

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}`"))
        }
        let t = &mut self.train;
        match key {
            "omega_pd" => t.weights.stereo = num(value)?,
            "omega_pf" => t.weights.flow = num(value)?,
            "omega_df" => t.weights.disparity_flow = num(value)?,
            "omega_s" => t.weights.smooth = num(value)?,
            "w1" => t.loss.occlusion.w1 = num(value)?,
            "w2" => t.loss.occlusion.w2 = num(value)?,
            "alpha_ssim" => t.loss.photometric.alpha_ssim = num(value)?,
            "ssim_window" => t.loss.photometric.ssim_window = num(value)?,
            "ssim_c1" => t.loss.photometric.ssim_c1 = num(value)?,
            "ssim_c2" => t.loss.photometric.ssim_c2 = num(value)?,
            "steps" => t.steps = num(value)?,
            "lr" => t.lr = num(value)?,
            "beta1" => t.beta1 = num(value)?,
            "beta2" => t.beta2 = num(value)?,
            "adam_eps" => t.adam_eps = num(value)?,
            "width" => t.width = num(value)?,
            "mode" => t.mode = TrainMode::from_str(value)?,
            "seed" => t.seed = num(value)?,
            "epochs" => t.epochs = num(value)?,
            "supervise_d2" => t.supervise_d2 = num(value)?,
            "descent_lr" => self.descent_lr = num(value)?,
            "max_disp" => self.init.max_disp = num(value)?,
            "patch" => self.init.patch = num(value)?,
            "flow_radius" => self.init.flow_radius = num(value)?,
            "pyramid_levels" => self.init.pyramid_levels = num(value)?,
            "dchange_max" => self.init.dchange_max = num(value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "omega_pd" => t.weights.stereo.to_string(),
            "omega_pf" => t.weights.flow.to_string(),
            "omega_df" => t.weights.disparity_flow.to_string(),
            "omega_s" => t.weights.smooth.to_string(),
            "w1" => t.loss.occlusion.w1.to_string(),
            "w2" => t.loss.occlusion.w2.to_string(),
            "alpha_ssim" => t.loss.photometric.alpha_ssim.to_string(),
            "ssim_window" => t.loss.photometric.ssim_window.to_string(),
            "ssim_c1" => t.loss.photometric.ssim_c1.to_string(),
            "ssim_c2" => t.loss.photometric.ssim_c2.to_string(),
            "steps" => t.steps.to_string(),
            "lr" => t.lr.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "width" => t.width.to_string(),
            "mode" => t.mode.to_string(),
            "seed" => t.seed.to_string(),
            "epochs" => t.epochs.to_string(),
            "supervise_d2" => t.supervise_d2.to_string(),
            "descent_lr" => self.descent_lr.to_string(),
            "max_disp" => self.init.max_disp.to_string(),
            "patch" => self.init.patch.to_string(),
            "flow_radius" => self.init.flow_radius.to_string(),
            "pyramid_levels" => self.init.pyramid_levels.to_string(),
            "dchange_max" => self.init.dchange_max.to_string(),
            _ => unreachable!("key list and accessors agree"),
        }
    }

    /// Every key with its current value, one per line.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        t.loss.validate()?;
        self.init.validate()?;
        let w = &t.weights;
        if [w.stereo, w.flow, w.disparity_flow, w.smooth].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        if t.steps == 0 || t.width == 0 {
            return Err(Error::InvalidArgument("steps and width must be at least 1".into()));
        }
        if !(t.lr > 0.0) || !(self.descent_lr > 0.0) || !(t.adam_eps > 0.0) {
            return Err(Error::InvalidArgument("learning rates and adam_eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(Error::InvalidArgument("beta1 and beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parses configuration text; `path` only labels error messages.
pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let err = |reason: String| Error::Config {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.contains(&key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        cfg.set(key, value).map_err(|reason| err(format!("{key}: {reason}")))?;
        seen.push(key);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "config is not UTF-8"))?;
    parse_config(&text, path)
}
