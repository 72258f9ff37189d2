//! Trains a small refiner on a handful of clips and applies it to one it has
//! not seen. Expect a few minutes in release mode.

use sceneflow::initializer::{init_state, InitConfig};
use sceneflow::metrics::trajectory_report;
use sceneflow::refiner::{refine_iterate, train_refiner, TrainConfig, TrainingClip};
use sceneflow::synth::{make_dataset, split, DatasetConfig};

fn main() -> sceneflow::Result<()> {
    let (train, test) = split(make_dataset(25, &DatasetConfig::default(), 8)?, 24);
    let prepare = |s: &sceneflow::synth::SyntheticSample| -> sceneflow::Result<TrainingClip> {
        let (x0, bwd) = init_state(&s.clip, &InitConfig::default())?;
        let mut clip = s.clip.clone();
        clip.backward_flow = None;
        Ok(TrainingClip {
            clip: clip.with_backward_flow(bwd)?,
            x0,
            gt: Some(s.gt.clone()),
            valid: s.valid.clone(),
        })
    };
    let items = train.iter().map(prepare).collect::<sceneflow::Result<Vec<_>>>()?;

    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 2,
        ..TrainConfig::default()
    };
    let (params, report) = train_refiner(&items, &cfg)?;
    println!("objective per epoch: {:?}", report.epoch_losses);

    let held = prepare(&test[0])?;
    let traj = refine_iterate(&held.clip, &held.x0, &params, cfg.steps, &cfg.weights, &cfg.loss)?;
    let rows = trajectory_report(&traj.states, &test[0].gt, &test[0].valid)?.unwrap();
    for (t, r) in rows.iter().enumerate() {
        println!("step {t}: loss {:.4}  SF {:.2}%  EPE d1 {:.3}", traj.losses[t].total, 100.0 * r.sf_out, r.epe_d1);
    }
    Ok(())
}
