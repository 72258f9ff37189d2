//! Evaluates the consistency loss on a rendered clip at the true scene flow
//! and at a shifted guess, term by term.

use sceneflow::consistency::{total_loss, LossParams, LossWeights};
use sceneflow::synth::{make_dataset, DatasetConfig};

fn main() -> sceneflow::Result<()> {
    let sample = make_dataset(1, &DatasetConfig::default(), 3)?.remove(0);
    let weights = LossWeights::default();
    let params = LossParams::default();

    let mut guess = sample.gt.clone();
    for d in guess.d1.data_mut() {
        *d += 1.5;
    }

    for (name, state) in [("ground truth", &sample.gt), ("d1 + 1.5px", &guess)] {
        let b = total_loss(&sample.clip, state, &weights, &params)?;
        println!(
            "{name:>12}: total {:.5}  pd {:.5}  pf {:.5}  df {:.5}  smooth {:.5}  visible {}",
            b.total,
            b.pd,
            b.pf,
            b.df,
            b.smooth,
            b.occlusion.count()
        );
    }
    Ok(())
}
