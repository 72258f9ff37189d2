//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines are printed even when everything passes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use sceneflow::consistency::{disparity_flow_loss, occlusion_mask, total_loss, LossParams, LossWeights, OcclusionParams};
use sceneflow::fields::{pack_state, unpack_state, ImageField, Mask, SceneFlowState};
use sceneflow::grad::{consistency_gradient, finite_difference_probe};
use sceneflow::initializer::{init_state, InitConfig};
use sceneflow::io;
use sceneflow::metrics::{self, epe, is_outlier, outlier_rates_with_d2, MetricsReport};
use sceneflow::refiner::{
    clip_objective, descent, refine_iterate, train_refiner, RefinerParams, TrainConfig, TrainMode, TrainingClip,
};
use sceneflow::synth::{make_dataset, DatasetConfig, SyntheticSample};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lib<T>(r: sceneflow::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 1

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = DatasetConfig {
        disparity_range: (1.0, 8.0),
        foreground_layers: (0, 1),
        max_shift: (2.0, 2.0),
        max_ddisp: 1.0,
        ..DatasetConfig::default().with_size(16, 16)
    };
    let (weights, params) = (LossWeights::default(), LossParams::default());
    let samples = lib(make_dataset(20, &cfg, 101))?;
    let mut worst: f64 = 0.0;
    let (mut checked, mut excluded) = (0usize, 0usize);
    for (k, s) in samples.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let mut packed = pack_state(&s.gt);
        for v in packed.data_mut() {
            *v += rng.gen_range(-0.75..0.75);
        }
        let state = lib(unpack_state(&packed))?;
        let (grad, b) = lib(consistency_gradient(&s.clip, &state, &weights, &params))?;
        ensure(
            b.pd > 0.0 && b.pf > 0.0 && b.df > 0.0 && b.smooth > 0.0 && b.occlusion.count() > 0,
            format!("sample {k}: a loss term is inactive"),
        )?;
        let probes = lib(finite_difference_probe(&s.clip, &state, &weights, &params, 1e-4))?;
        for (a, p) in grad.data().iter().zip(&probes) {
            if (p.forward - p.backward).abs() > 1e-3 * p.forward.abs().max(p.backward.abs()) + 1e-9 {
                excluded += 1;
                continue;
            }
            checked += 1;
            worst = worst.max((a - p.central).abs() / a.abs().max(p.central.abs()).max(1e-7));
        }
    }
    let elapsed = start.elapsed();
    let detail = format!("max rel err {worst:.2e} over {checked} coords ({excluded} at kinks), {elapsed:.1?}");
    ensure(worst < 1e-4, format!("{detail}; needs < 1e-4"))?;
    ensure(checked >= 20 * 5 * 256 * 9 / 10, format!("{detail}; too many coordinates excluded"))?;
    ensure(elapsed < Duration::from_secs(60), format!("{detail}; needs < 60 s"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

/// Largest total loss at ground truth over the 50 reference clips was 0.136,
/// mostly smoothness across layer boundaries and sloped planes.
const GT_TOTAL_TOLERANCE: f64 = 0.15;

fn oracle_closure() -> Outcome {
    let samples = lib(make_dataset(50, &DatasetConfig::default(), 202))?;
    let (weights, params) = (LossWeights::default(), LossParams::default());
    let rows: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|s| -> sceneflow::Result<(f64, f64)> {
            let total = total_loss(&s.clip, &s.gt, &weights, &params)?.total;
            let mask = s.flow_consistent_mask();
            let df = disparity_flow_loss(&s.gt, &mask)?;
            let mean = df.data().iter().sum::<f64>() / mask.count().max(1) as f64;
            Ok((total, mean))
        })
        .collect::<sceneflow::Result<_>>()
        .map_err(|e| e.to_string())?;
    let max_total = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let max_df = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = format!("max total {max_total:.4} (tol {GT_TOTAL_TOLERANCE}), max L_df {max_df:.2e}");
    ensure(max_total < GT_TOTAL_TOLERANCE, detail.clone())?;
    ensure(max_df < 1e-6, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn constant_flow(w: usize, h: usize, u: f64, v: f64) -> ImageField {
    ImageField::from_fn(w, h, 2, |c, _, _| if c == 0 { u } else { v })
}

fn occlusion_decisions() -> Outcome {
    let p = OcclusionParams::default();
    let (w, h) = (8, 6);
    let fixed = [((10.0, 0.0), (-10.0, 0.0), true), ((0.0, 0.0), (0.0, 0.0), true), ((10.0, 0.0), (-5.0, 0.0), false)];
    for (fwd, bwd, expected) in fixed {
        let m = lib(occlusion_mask(&constant_flow(w, h, fwd.0, fwd.1), &constant_flow(w, h, bwd.0, bwd.1), &p))?;
        let want = if expected { w * h } else { 0 };
        ensure(m.count() == want, format!("fwd {fwd:?} bwd {bwd:?}: {} of {} visible", m.count(), w * h))?;
    }

    // Integer forward flows that stay inside the image make the warped
    // backward flow a plain lookup.
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut pixels = 0;
    for case in 0..100 {
        let fx: Vec<i64> = (0..w * h).map(|_| rng.gen_range(-3..=3)).collect();
        let fy: Vec<i64> = (0..w * h).map(|_| rng.gen_range(-2..=2)).collect();
        let target = |i: usize| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            ((x + fx[i]).clamp(0, w as i64 - 1), (y + fy[i]).clamp(0, h as i64 - 1))
        };
        let fx: Vec<i64> = (0..w * h).map(|i| target(i).0 - (i % w) as i64).collect();
        let fy: Vec<i64> = (0..w * h).map(|i| target(i).1 - (i / w) as i64).collect();
        let spread = [0.05, 0.3, 1.0, 3.0][case % 4];
        let bwd: Vec<f64> = (0..2 * w * h).map(|_| rng.gen_range(-3.0..3.0) + rng.gen_range(-spread..spread)).collect();
        let fwd = ImageField::from_fn(w, h, 2, |c, x, y| if c == 0 { fx[y * w + x] as f64 } else { fy[y * w + x] as f64 });
        // half of the backward flows are near-inverses of the forward flow
        let bwd = ImageField::from_fn(w, h, 2, |c, x, y| {
            let q = y * w + x;
            if case % 2 == 0 {
                bwd[c * w * h + q]
            } else {
                let src = (0..w * h).find(|&i| target(i) == (x as i64, y as i64));
                match src {
                    Some(i) => -(if c == 0 { fx[i] } else { fy[i] }) as f64 + rng.gen_range(-spread..spread),
                    None => bwd[c * w * h + q],
                }
            }
        });
        let got = lib(occlusion_mask(&fwd, &bwd, &p))?;
        for i in 0..w * h {
            let (tx, ty) = target(i);
            let (bu, bv) = (bwd.get(0, tx as usize, ty as usize), bwd.get(1, tx as usize, ty as usize));
            let (u, v) = (fx[i] as f64, fy[i] as f64);
            let expected = (u + bu).powi(2) + (v + bv).powi(2) < p.w1 * (u * u + v * v + bu * bu + bv * bv) + p.w2;
            ensure(got.data()[i] == expected, format!("case {case} pixel {i}: got {}, expected {expected}", got.data()[i]))?;
            pixels += expected as usize;
        }
    }
    Ok(format!("3 fixed cases and 100 random tables agree ({pixels} of {} pixels visible)", 100 * w * h))
}

// ---------------------------------------------------------------- 4

/// Reference run: mean d1 EPE 1.59 px at the perturbed start and 0.46 px
/// after 50 steps (ratio 0.29).
const DESCENT_EPE_RATIO: f64 = 0.5;
const DESCENT_LR: f64 = 2000.0;

fn perturbed(gt: &SceneFlowState, sigma: f64, seed: u64) -> sceneflow::Result<SceneFlowState> {
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut packed = pack_state(gt);
    for v in packed.data_mut() {
        *v += noise.sample(&mut rng);
    }
    let mut s = unpack_state(&packed)?;
    s.clamp_disparities();
    Ok(s)
}

fn output_descent() -> Outcome {
    let start = Instant::now();
    let samples = lib(make_dataset(20, &DatasetConfig::default(), 99))?;
    let (weights, params) = (LossWeights::default(), LossParams::default());
    let steps = 50;
    let runs: Vec<(Vec<f64>, f64, f64)> = samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| -> sceneflow::Result<_> {
            let x0 = perturbed(&s.gt, 2.0, k as u64)?;
            let traj = descent(&s.clip, &x0, DESCENT_LR, steps, &weights, &params)?;
            let e0 = epe(&x0.d1, &s.gt.d1, &s.valid)?.unwrap_or(0.0);
            let e1 = epe(&traj.last().d1, &s.gt.d1, &s.valid)?.unwrap_or(0.0);
            Ok((traj.totals(), e0, e1))
        })
        .collect::<sceneflow::Result<_>>()
        .map_err(|e| e.to_string())?;
    let n = runs.len() as f64;
    let mean_loss: Vec<f64> = (0..=steps).map(|t| runs.iter().map(|r| r.0[t]).sum::<f64>() / n).collect();
    let decreasing = mean_loss.windows(2).filter(|w| w[1] < w[0]).count();
    let e0 = runs.iter().map(|r| r.1).sum::<f64>() / n;
    let e1 = runs.iter().map(|r| r.2).sum::<f64>() / n;
    let elapsed = start.elapsed();
    let detail = format!(
        "loss {:.4} -> {:.4}, decreased in {decreasing}/{steps} steps, d1 EPE {e0:.3} -> {e1:.3} px, {elapsed:.1?}",
        mean_loss[0], mean_loss[steps]
    );
    ensure(decreasing * 10 >= steps * 9, format!("{detail}; needs >= 90% decreasing steps"))?;
    ensure(e1 <= DESCENT_EPE_RATIO * e0, format!("{detail}; needs EPE ratio <= {DESCENT_EPE_RATIO}"))?;
    ensure(elapsed < Duration::from_secs(300), format!("{detail}; needs < 5 min"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 5

const TRAIN_CLIPS: usize = 200;
const HELD_OUT_CLIPS: usize = 20;
const DATASET_SEED: u64 = 2024;
/// Minimum drop of the held-out mean SF rate from step 0 to step 5. The
/// reference run went from 19.44% to 17.14% (17.07% at step 10).
const SF_MARGIN: f64 = 0.02;

fn training_clip(s: &SyntheticSample) -> sceneflow::Result<TrainingClip> {
    let (x0, bwd) = init_state(&s.clip, &InitConfig::default())?;
    let mut clip = s.clip.clone();
    clip.backward_flow = None;
    Ok(TrainingClip {
        clip: clip.with_backward_flow(bwd)?,
        x0,
        gt: Some(s.gt.clone()),
        valid: s.valid.clone(),
    })
}

/// Supervised on D1, flow and C, three epochs at lr 1e-3.
fn acceptance_train_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 3,
        ..TrainConfig::default()
    }
}

fn learned_refiner() -> Outcome {
    let start = Instant::now();
    let samples = lib(make_dataset(TRAIN_CLIPS + HELD_OUT_CLIPS, &DatasetConfig::default(), DATASET_SEED))?;
    let items: Vec<TrainingClip> = lib(samples.par_iter().map(training_clip).collect())?;
    let (train, held) = items.split_at(TRAIN_CLIPS);
    let cfg = acceptance_train_config();
    let (params, _) = lib(train_refiner(train, &cfg))?;
    let train_time = start.elapsed();

    let steps = 10;
    let per_clip: Vec<Vec<MetricsReport>> = held
        .par_iter()
        .zip(&samples[TRAIN_CLIPS..])
        .map(|(it, s)| -> sceneflow::Result<Vec<MetricsReport>> {
            let traj = refine_iterate(&it.clip, &it.x0, &params, steps, &cfg.weights, &cfg.loss)?;
            Ok(metrics::trajectory_report(&traj.states, &s.gt, &s.valid)?.expect("rendered clips are valid"))
        })
        .collect::<sceneflow::Result<_>>()
        .map_err(|e| e.to_string())?;
    let sf: Vec<f64> = (0..=steps)
        .map(|t| MetricsReport::mean(&per_clip.iter().map(|r| r[t]).collect::<Vec<_>>()).unwrap().sf_out)
        .collect();
    let trace = sf.iter().map(|v| format!("{:.2}", 100.0 * v)).collect::<Vec<_>>().join(" ");
    let detail = format!("held-out SF % by step [{trace}], training {train_time:.0?}");
    ensure(sf[5] < sf[0] - SF_MARGIN, format!("{detail}; needs SF5 < SF0 - {SF_MARGIN}"))?;
    ensure(sf[..=5].windows(2).all(|w| w[1] <= w[0]), format!("{detail}; SF rises within steps 0..5"))?;
    // saturation: steps 5..10 change SF by at most half the 0..5 gain
    ensure((sf[10] - sf[5]).abs() <= 0.5 * (sf[0] - sf[5]), format!("{detail}; not saturated by step 10"))?;
    ensure(train_time < Duration::from_secs(7200), format!("{detail}; training needs < 2 h"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6

fn zero_refiner_identity() -> Outcome {
    let samples = lib(make_dataset(3, &DatasetConfig::default().with_size(64, 48), 606))?;
    let params = RefinerParams::init(32, 6);
    let mut worst: f64 = 0.0;
    for s in &samples {
        let item = lib(training_clip(s))?;
        for mode in [TrainMode::Supervised, TrainMode::SelfSupervised] {
            let cfg = TrainConfig {
                mode,
                ..TrainConfig::default()
            };
            let traj = lib(refine_iterate(&item.clip, &item.x0, &params, cfg.steps, &cfg.weights, &cfg.loss))?;
            ensure(traj.states.iter().all(|x| *x == item.x0), "a step changed the state")?;
            let objective = lib(clip_objective(&params, &item, &cfg, None))?;
            let l0 = match mode {
                TrainMode::Supervised => lib(sceneflow::refiner::supervised_loss(&item.x0, &s.gt, &s.valid))?.total,
                TrainMode::SelfSupervised => traj.losses[0].total,
            };
            let expected = (cfg.steps + 1) as f64 * l0;
            worst = worst.max((objective - expected).abs() / expected.abs());
        }
    }
    ensure(worst < 1e-12, format!("objective off by {worst:.2e} relative"))?;
    Ok(format!("states bit-identical; objective = (T+1)·L(X0) within {worst:.1e}"))
}

// ---------------------------------------------------------------- 7

fn metrics_rules() -> Outcome {
    // errors in 1/64 px and magnitudes in 1/16 px keep every product exact
    let mut cases = 0;
    for i in 0..=64 * 12 {
        for j in 0..=16 * 200 {
            let (err, mag) = (i as f64 / 64.0, j as f64 / 16.0);
            let expected = i >= 3 * 64 && 20 * 16 * i >= 64 * j;
            ensure(is_outlier(err, mag) == expected, format!("error {err}, magnitude {mag}"))?;
            cases += 1;
        }
    }

    let (w, h) = (16, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut pixels = 0;
    for _ in 0..20 {
        let mut field = |c: usize, lo: f64, hi: f64| ImageField::from_fn(w, h, c, |_, _, _| rng.gen_range(lo..hi));
        let gt = lib(SceneFlowState::new(field(1, 1.0, 80.0), field(1, 1.0, 80.0), field(2, -40.0, 40.0), field(1, -3.0, 3.0)))?;
        let gt_d2 = metrics::warped_gt_d2(&gt);
        let mut noisy = |f: &ImageField| {
            let scale = rng.gen_range(0.0..8.0);
            let mut out = f.clone();
            for v in out.data_mut() {
                *v += rng.gen_range(-scale..=scale);
            }
            out
        };
        let pred = lib(SceneFlowState::new(noisy(&gt.d1), noisy(&gt.d2), noisy(&gt.flow), noisy(&gt.dchange)))?;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let valid = Mask::from_fn(w, h, |a, b| (a, b) == (x, y));
                let r = lib(outlier_rates_with_d2(&pred, &gt, &gt_d2, &valid))?.expect("one valid pixel");
                let d1 = (pred.d1.data()[i] - gt.d1.data()[i]).abs();
                let d2 = (pred.d1.data()[i] + pred.dchange.data()[i] - gt_d2.data()[i]).abs();
                let f = (pred.flow.get(0, x, y) - gt.flow.get(0, x, y)).hypot(pred.flow.get(1, x, y) - gt.flow.get(1, x, y));
                let fm = gt.flow.get(0, x, y).hypot(gt.flow.get(1, x, y));
                let outl = |e: f64, m: f64| e >= 3.0 && e >= 0.05 * m;
                let union = outl(d1, gt.d1.data()[i]) || outl(d2, gt_d2.data()[i].abs()) || outl(f, fm);
                ensure((r.sf_out == 1.0) == union, format!("pixel ({x}, {y}): SF {} but union {union}", r.sf_out))?;
                ensure(
                    r.sf_out == r.d1_out.max(r.d2_out).max(r.f1_out),
                    format!("pixel ({x}, {y}): SF is not the union of D1, D2 and F1"),
                )?;
                pixels += 1;
            }
        }
    }
    Ok(format!("{cases} grid cases and {pixels} random pixels agree"))
}

// ---------------------------------------------------------------- 8

fn png_gray16(path: &Path, w: u32, h: u32, values: &[u16]) {
    let file = fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(file, w, h);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    enc.write_header().unwrap().write_image_data(&bytes).unwrap();
}

fn png_rgb16(path: &Path, w: u32, h: u32, values: &[[u16; 3]]) {
    let file = fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(file, w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let bytes: Vec<u8> = values.iter().flatten().flat_map(|v| v.to_be_bytes()).collect();
    enc.write_header().unwrap().write_image_data(&bytes).unwrap();
}

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| dir.path().join(n);
    let (w, h) = (13, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(808);

    let img = ImageField::from_fn(w, h, 1, |_, _, _| rng.gen_range(-100.0f32..100.0) as f64);
    lib(io::write_pfm(p("a.pfm"), &img))?;
    ensure(lib(io::read_pfm(p("a.pfm")))? == img, "pfm values differ")?;
    let flow = ImageField::from_fn(w, h, 2, |_, _, _| rng.gen_range(-50.0f32..50.0) as f64);
    lib(io::write_flo(p("a.flo"), &flow))?;
    ensure(lib(io::read_flo(p("a.flo")))? == flow, "flo values differ")?;

    let valid = Mask::from_fn(w, h, |x, y| (x + y) % 5 != 0);
    let disp = ImageField::from_fn(w, h, 1, |_, x, y| if (x + y) % 5 != 0 { rng.gen_range(1..40000) as f64 / 256.0 } else { 0.0 });
    lib(io::write_kitti_disp_png(p("d.png"), &disp, &valid))?;
    ensure(lib(io::read_kitti_disp_png(p("d.png")))? == (disp.clone(), valid.clone()), "KITTI disparity differs")?;
    let kflow = ImageField::from_fn(w, h, 2, |_, x, y| {
        if (x + y) % 5 != 0 {
            rng.gen_range(-30000i32..30000) as f64 / 64.0
        } else {
            0.0
        }
    });
    lib(io::write_kitti_flow_png(p("f.png"), &kflow, &valid))?;
    ensure(lib(io::read_kitti_flow_png(p("f.png")))? == (kflow, valid), "KITTI flow differs")?;

    for (name, path) in [("pfm", "a.pfm"), ("flo", "a.flo"), ("disp", "d.png"), ("flow", "f.png")] {
        let before = fs::read(p(path)).unwrap();
        let again = p(&format!("again_{path}"));
        match name {
            "pfm" => lib(io::write_pfm(&again, &lib(io::read_pfm(p(path)))?))?,
            "flo" => lib(io::write_flo(&again, &lib(io::read_flo(p(path)))?))?,
            "disp" => {
                let (d, m) = lib(io::read_kitti_disp_png(p(path)))?;
                lib(io::write_kitti_disp_png(&again, &d, &m))?
            }
            _ => {
                let (f, m) = lib(io::read_kitti_flow_png(p(path)))?;
                lib(io::write_kitti_flow_png(&again, &f, &m))?
            }
        }
        ensure(fs::read(&again).unwrap() == before, format!("{name} rewrite is not byte-identical"))?;
    }

    png_gray16(&p("fixture_d.png"), 2, 1, &[12800, 0]);
    let (d, m) = lib(io::read_kitti_disp_png(p("fixture_d.png")))?;
    ensure(d.data() == [50.0, 0.0] && m.data() == [true, false], format!("disparity fixture read as {:?}", d.data()))?;
    png_rgb16(&p("fixture_f.png"), 2, 1, &[[1 << 15, (1 << 15) + 64, 1], [0, 0, 0]]);
    let (f, m) = lib(io::read_kitti_flow_png(p("fixture_f.png")))?;
    ensure(
        f.get(0, 0, 0) == 0.0 && f.get(1, 0, 0) == 1.0 && m.data() == [true, false],
        format!("flow fixture read as {:?}", f.data()),
    )?;
    Ok("PFM, .flo and KITTI PNG round trips exact; 12800 -> 50.0, 2^15 -> 0.0".into())
}

// ---------------------------------------------------------------- 9

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn cli_pipeline(root: &Path) -> Result<(), String> {
    let s = |p: PathBuf| p.to_str().unwrap().to_string();
    let data = root.join("data");
    let init = root.join("init");
    fs::write(root.join("run.cfg"), "width = 4\nsteps = 2\nepochs = 1\nlr = 1e-3\nseed = 3\n").unwrap();
    let cfg = s(root.join("run.cfg"));
    let params = s(root.join("refiner.bin"));
    let commands: Vec<Vec<String>> = vec![
        vec!["gen".into(), "--count".into(), "3".into(), "--seed".into(), "7".into(), "--size".into(), "40x32".into(), "--out-dir".into(), s(data.clone())],
        vec!["init".into(), "--clip".into(), s(data.clone()), "--out-dir".into(), s(init.clone()), "--config".into(), cfg.clone()],
        vec!["train".into(), "--dataset-dir".into(), s(data.clone()), "--init-dir".into(), s(init.clone()), "--config".into(), cfg.clone(), "--out".into(), params.clone()],
        vec!["refine".into(), "--clip".into(), s(data.clone()), "--init-dir".into(), s(init.clone()), "--params".into(), params, "--config".into(), cfg.clone(), "--report".into(), s(root.join("learned.csv")), "--out-dir".into(), s(root.join("learned"))],
        vec!["refine".into(), "--strategy".into(), "descent".into(), "--clip".into(), s(data.clone()), "--init-dir".into(), s(init), "--steps".into(), "3".into(), "--report".into(), s(root.join("descent.csv")), "--out-dir".into(), s(root.join("descent"))],
        vec!["eval".into(), "--pred-dir".into(), s(root.join("learned")), "--gt-dir".into(), s(data), "--report".into(), s(root.join("eval.csv"))],
    ];
    for args in commands {
        let name = args[0].clone();
        let out = sceneflow::cli::run(std::iter::once("sceneflow".to_string()).chain(args));
        out.map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(())
}

fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_pipeline(a.path())?;
    cli_pipeline(b.path())?;
    let (sa, mut sb) = (snapshot(a.path()), snapshot(b.path()));
    // the config file names its own directory nowhere, so it matches too
    for (path, bytes) in &sa {
        let other = sb.remove(path).ok_or_else(|| format!("{} missing in second run", path.display()))?;
        ensure(other == *bytes, format!("{} differs between runs", path.display()))?;
    }
    ensure(sb.is_empty(), "second run wrote extra files")?;
    Ok(format!("gen, init, train, refine (learned, descent) and eval: {} files byte-identical", sa.len()))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("oracle closure", oracle_closure),
        ("occlusion mask", occlusion_decisions),
        ("output descent", output_descent),
        ("learned refiner", learned_refiner),
        ("zero-refiner identity", zero_refiner_identity),
        ("metrics", metrics_rules),
        ("file formats", io_round_trips),
        ("determinism", cli_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str()) || *o == (k + 1).to_string()) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{:.1?}]", k + 1, started.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{:.1?}]", k + 1, started.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
