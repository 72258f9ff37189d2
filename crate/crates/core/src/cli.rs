//! The `sceneflow` command line: one subcommand per pipeline stage, with
//! everything passed between stages on disk.
//!
//! `--clip` and friends accept either a single clip directory or a dataset
//! root whose subdirectories are clips; outputs mirror the input layout.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{SceneFlowState, StereoClip};
use crate::initializer::init_state;
use crate::io::{self, RunConfig};
use crate::metrics::{self, MetricsReport};
use crate::refiner::{self, RefineTrajectory, RefinerParams, TrainMode, TrainingClip};
use crate::synth::{make_dataset, DatasetConfig};

pub const THREADS_ENV: &str = "SCENEFLOW_THREADS";
const IMAGE_MARKER: &str = "l1.pfm";
const STATE_MARKER: &str = "d1.pfm";

#[derive(Debug, Parser)]
#[command(name = "sceneflow", version, about = "Scene flow refinement with a photometric and geometric consistency loss")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic stereo-video dataset with exact ground truth.
    Gen(GenArgs),
    /// Produce the starting scene flow and backward flow for clips.
    Init(InitArgs),
    /// Refine scene flow with the learned refiner or output descent.
    Refine(RefineArgs),
    /// Train the refinement network on a synthetic dataset.
    Train(TrainArgs),
    /// Score predicted scene flow against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "128x96", value_parser = parse_size)]
    pub size: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitMode {
    /// Block matching on the images.
    Block,
    /// Fields read from `--from`.
    External,
    /// Ground truth stored next to the images.
    Gt,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// A clip directory, a dataset root, or four images `l1 r1 l2 r2`.
    #[arg(long, num_args = 1..=4, required = true)]
    pub clip: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = InitMode::Block)]
    pub mode: InitMode,
    /// Prediction directory for `--mode external`.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Learned,
    Descent,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// A clip directory or a dataset root.
    #[arg(long)]
    pub clip: PathBuf,
    /// Output of `init`, mirroring the layout of `--clip`.
    #[arg(long)]
    pub init_dir: PathBuf,
    /// Refiner parameter file, or `none` for the identity refiner.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long, value_enum, default_value_t = Strategy::Learned)]
    pub strategy: Strategy,
    /// Refinement steps; defaults to the config value.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Output-descent step size; defaults to the config value.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Per-step metrics CSV (needs ground truth in the clip directories).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's `mode`.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,
    /// Starting states from `init`; block matching is run when absent.
    #[arg(long)]
    pub init_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// One CSV row per clip; the `step` column holds the clip index.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width `{w}`"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height `{h}`"))?;
    if w < 8 || h < 8 {
        return Err("images must be at least 8x8".into());
    }
    Ok((w, h))
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    s.parse()
}

fn config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), io::load_config)
}

/// Configures the global thread pool from [`THREADS_ENV`], if set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    execute(&cli.command)
}

/// Runs a parsed command and returns its one-line summary.
pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Init(a) => cmd_init(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn clip_name(i: usize) -> String {
    format!("{i:04}")
}

pub fn cmd_gen(a: &GenArgs) -> Result<String> {
    let cfg = DatasetConfig::default().with_size(a.size.0, a.size.1);
    let samples = make_dataset(a.count, &cfg, a.seed)?;
    io::create_dir(&a.out_dir)?;
    samples
        .par_iter()
        .enumerate()
        .try_for_each(|(i, s)| io::write_sample_dir(a.out_dir.join(clip_name(i)), s))?;
    Ok(format!("wrote {} clips to {}", a.count, a.out_dir.display()))
}

/// Pairs of (input clip directory, output directory).
fn mirror(root: &Path, out: &Path, marker: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    let dirs = io::clip_dirs(root, marker)?;
    if dirs.len() == 1 && dirs[0] == root {
        return Ok(vec![(root.to_path_buf(), out.to_path_buf())]);
    }
    Ok(dirs
        .into_iter()
        .map(|d| {
            let name = d.file_name().expect("subdirectory has a name").to_owned();
            (d, out.join(name))
        })
        .collect())
}

fn write_init(out: &Path, state: &SceneFlowState, backward: &crate::fields::ImageField) -> Result<()> {
    io::write_state_dir(out, state)?;
    io::write_flo(out.join(io::BACKWARD_FLOW), backward)
}

pub fn cmd_init(a: &InitArgs) -> Result<String> {
    let cfg = config(a.config.as_deref())?;
    if a.clip.len() == 4 {
        if a.mode != InitMode::Block {
            return Err(Error::InvalidArgument("image paths only support --mode block".into()));
        }
        let clip = io::read_clip_files(&a.clip)?;
        let (state, bwd) = init_state(&clip, &cfg.init)?;
        write_init(&a.out_dir, &state, &bwd)?;
        return Ok(format!("initialized 1 clip into {}", a.out_dir.display()));
    }
    if a.clip.len() != 1 {
        return Err(Error::InvalidArgument("--clip takes one directory or four images".into()));
    }
    let pairs = mirror(&a.clip[0], &a.out_dir, IMAGE_MARKER)?;
    let external = match (a.mode, &a.from) {
        (InitMode::External, Some(from)) => Some(from.clone()),
        (InitMode::External, None) => return Err(Error::InvalidArgument("--mode external needs --from".into())),
        _ => None,
    };
    pairs.par_iter().try_for_each(|(dir, out)| -> Result<()> {
        let (state, bwd) = match a.mode {
            InitMode::Block => init_state(&io::read_clip_dir(dir)?, &cfg.init)?,
            InitMode::Gt => read_init(dir)?,
            InitMode::External => {
                let root = external.as_ref().expect("checked above");
                let src = if pairs.len() == 1 { root.clone() } else { root.join(dir.file_name().expect("named")) };
                read_init(&src)?
            }
        };
        write_init(out, &state, &bwd)
    })?;
    Ok(format!("initialized {} clips into {}", pairs.len(), a.out_dir.display()))
}

/// A state directory plus its backward flow.
fn read_init(dir: &Path) -> Result<(SceneFlowState, crate::fields::ImageField)> {
    let state = io::read_state_dir(dir)?;
    let bwd = io::read_flo(dir.join(io::BACKWARD_FLOW))?;
    Ok((state, bwd))
}

/// Clip images with the backward flow taken from the init directory.
fn load_refine_input(clip_dir: &Path, init_dir: &Path) -> Result<(StereoClip, SceneFlowState)> {
    let mut clip = io::read_clip_dir(clip_dir)?;
    clip.backward_flow = None;
    let (state, bwd) = read_init(init_dir)?;
    Ok((clip.with_backward_flow(bwd)?, state))
}

fn load_params(spec: Option<&str>, width: usize) -> Result<RefinerParams> {
    match spec {
        None => Err(Error::InvalidArgument("--strategy learned needs --params (a file or `none`)".into())),
        Some("none") => Ok(RefinerParams::zeros(width)),
        Some(path) => {
            let path = Path::new(path);
            RefinerParams::from_bytes(&io::read_bytes(path)?, path)
        }
    }
}

pub fn cmd_refine(a: &RefineArgs) -> Result<String> {
    let cfg = config(a.config.as_deref())?;
    let steps = a.steps.unwrap_or(cfg.train.steps);
    let lr = a.lr.unwrap_or(cfg.descent_lr);
    let params = match a.strategy {
        Strategy::Learned => Some(load_params(a.params.as_deref(), cfg.train.width)?),
        Strategy::Descent => None,
    };
    let pairs = mirror(&a.clip, &a.out_dir, IMAGE_MARKER)?;
    let single = pairs.len() == 1 && pairs[0].0 == a.clip;
    let (weights, loss) = (&cfg.train.weights, &cfg.train.loss);
    let results: Vec<(RefineTrajectory, Option<Vec<MetricsReport>>)> = pairs
        .par_iter()
        .map(|(dir, out)| -> Result<_> {
            let init = if single { a.init_dir.clone() } else { a.init_dir.join(dir.file_name().expect("named")) };
            let (clip, x0) = load_refine_input(dir, &init)?;
            let traj = match &params {
                Some(p) => refiner::refine_iterate(&clip, &x0, p, steps, weights, loss)?,
                None => refiner::descent(&clip, &x0, lr, steps, weights, loss)?,
            };
            io::write_state_dir(out, traj.last())?;
            let rows = if a.report.is_some() {
                let gt = io::read_state_dir(dir)?;
                let valid = io::read_valid_mask(dir, gt.extent())?;
                metrics::trajectory_report(&traj.states, &gt, &valid)?
            } else {
                None
            };
            Ok((traj, rows))
        })
        .collect::<Result<_>>()?;

    let first: f64 = results.iter().map(|(t, _)| t.losses[0].total).sum::<f64>() / results.len() as f64;
    let last: f64 = results.iter().map(|(t, _)| t.losses[steps].total).sum::<f64>() / results.len() as f64;
    let mut summary = format!("refined {} clips over {steps} steps: mean loss {first:.6} -> {last:.6}", results.len());
    if let Some(report) = &a.report {
        let rows = per_step_means(&results, steps)
            .ok_or_else(|| Error::InvalidArgument("no valid ground-truth pixels for the report".into()))?;
        io::write_atomic(report, metrics::csv_string(&rows).as_bytes())?;
        summary.push_str(&format!(
            "; SF {:.2}% -> {:.2}%",
            100.0 * rows[0].sf_out,
            100.0 * rows[steps].sf_out
        ));
    }
    Ok(summary)
}

fn per_step_means(results: &[(RefineTrajectory, Option<Vec<MetricsReport>>)], steps: usize) -> Option<Vec<MetricsReport>> {
    (0..=steps)
        .map(|s| {
            let at: Option<Vec<MetricsReport>> = results.iter().map(|(_, rows)| rows.as_ref().map(|r| r[s])).collect();
            MetricsReport::mean(&at?)
        })
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let mut cfg = config(a.config.as_deref())?;
    if let Some(mode) = a.mode {
        cfg.train.mode = mode;
    }
    let dirs = io::clip_dirs(&a.dataset_dir, IMAGE_MARKER)?;
    let mode = cfg.train.mode;
    let items: Vec<TrainingClip> = dirs
        .par_iter()
        .map(|dir| -> Result<TrainingClip> {
            let mut clip = io::read_clip_dir(dir)?;
            clip.backward_flow = None;
            let (x0, bwd) = match &a.init_dir {
                Some(init) => read_init(&init.join(dir.file_name().expect("named")))?,
                None => init_state(&clip, &cfg.init)?,
            };
            let gt = match mode {
                TrainMode::Supervised => Some(io::read_state_dir(dir)?),
                TrainMode::SelfSupervised => None,
            };
            let valid = io::read_valid_mask(dir, clip.extent())?;
            Ok(TrainingClip {
                clip: clip.with_backward_flow(bwd)?,
                x0,
                gt,
                valid,
            })
        })
        .collect::<Result<_>>()?;
    let (params, report) = refiner::train_refiner(&items, &cfg.train)?;
    io::write_atomic(&a.out, &params.to_bytes())?;
    let first = report.epoch_losses.first().copied().unwrap_or(f64::NAN);
    let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "trained on {} clips for {} epochs ({mode}): objective {first:.6} -> {last:.6}; wrote {}",
        items.len(),
        cfg.train.epochs,
        a.out.display()
    ))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let pairs = mirror(&a.gt_dir, &a.pred_dir, STATE_MARKER)?;
    let rows: Vec<MetricsReport> = pairs
        .par_iter()
        .map(|(gt_dir, pred_dir)| -> Result<MetricsReport> {
            let gt = io::read_state_dir(gt_dir)?;
            let pred = io::read_state_dir(pred_dir)?;
            let valid = io::read_valid_mask(gt_dir, gt.extent())?;
            metrics::outlier_rates(&pred, &gt, &valid)?
                .ok_or_else(|| Error::format(gt_dir, "no valid ground-truth pixels"))
        })
        .collect::<Result<_>>()?;
    if let Some(report) = &a.report {
        io::write_atomic(report, metrics::csv_string(&rows).as_bytes())?;
    }
    let m = MetricsReport::mean(&rows).expect("at least one clip");
    Ok(format!(
        "{} clips: D1 {:.2}%  D2 {:.2}%  F1 {:.2}%  SF {:.2}%  EPE d1 {:.3}  flow {:.3}  C {:.3}",
        rows.len(),
        100.0 * m.d1_out,
        100.0 * m.d2_out,
        100.0 * m.f1_out,
        100.0 * m.sf_out,
        m.epe_d1,
        m.epe_flow,
        m.epe_dchange
    ))
}

/// Entry point of the binary: returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|_| execute(&cli.command));
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
