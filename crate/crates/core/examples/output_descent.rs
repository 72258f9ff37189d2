//! Output descent: gradient steps on the loss straight from a noisy start.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sceneflow::consistency::{LossParams, LossWeights};
use sceneflow::fields::{pack_state, unpack_state};
use sceneflow::metrics::epe;
use sceneflow::refiner::descent;
use sceneflow::synth::{make_dataset, DatasetConfig};

fn main() -> sceneflow::Result<()> {
    let sample = make_dataset(1, &DatasetConfig::default(), 99)?.remove(0);
    let noise = Normal::new(0.0, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut packed = pack_state(&sample.gt);
    for v in packed.data_mut() {
        *v += noise.sample(&mut rng);
    }
    let mut x0 = unpack_state(&packed)?;
    x0.clamp_disparities();

    let traj = descent(&sample.clip, &x0, 2000.0, 30, &LossWeights::default(), &LossParams::default())?;
    for (t, (state, loss)) in traj.states.iter().zip(&traj.losses).enumerate().step_by(5) {
        let e = epe(&state.d1, &sample.gt.d1, &sample.valid)?.unwrap();
        println!("step {t:2}: loss {:.4}  d1 EPE {e:.3}px", loss.total);
    }
    Ok(())
}
