//! Block-matching initialization and its outlier rates on synthetic clips.

use sceneflow::initializer::{init_state, InitConfig};
use sceneflow::metrics::{outlier_rates, MetricsReport};
use sceneflow::synth::{make_dataset, DatasetConfig};

fn main() -> sceneflow::Result<()> {
    let samples = make_dataset(4, &DatasetConfig::default(), 5)?;
    let mut rows = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let (x0, _backward) = init_state(&s.clip, &InitConfig::default())?;
        let r = outlier_rates(&x0, &s.gt, &s.valid)?.expect("rendered clips are fully valid");
        println!("clip {i}: D1 {:.1}%  F1 {:.1}%  SF {:.1}%  EPE d1 {:.2}", 100.0 * r.d1_out, 100.0 * r.f1_out, 100.0 * r.sf_out, r.epe_d1);
        rows.push(r);
    }
    let m = MetricsReport::mean(&rows).unwrap();
    println!("mean SF {:.1}%", 100.0 * m.sf_out);
    Ok(())
}
