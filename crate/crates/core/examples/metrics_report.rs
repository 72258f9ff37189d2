use sceneflow::metrics::{is_outlier, outlier_rates, write_csv};
use sceneflow::synth::{make_dataset, DatasetConfig};

fn main() -> sceneflow::Result<()> {
    // 3px alone is not enough once the true value is above 60px
    for (err, mag) in [(2.9, 10.0), (3.0, 10.0), (3.0, 60.0), (3.0, 61.0)] {
        println!("error {err} on magnitude {mag}: outlier = {}", is_outlier(err, mag));
    }

    let s = make_dataset(1, &DatasetConfig::default(), 4)?.remove(0);
    let mut rows = vec![outlier_rates(&s.gt, &s.gt, &s.valid)?.unwrap()];
    let mut pred = s.gt.clone();
    for (k, f) in pred.flow.data_mut().iter_mut().enumerate() {
        if k % 3 == 0 {
            *f += 4.0;
        }
    }
    rows.push(outlier_rates(&pred, &s.gt, &s.valid)?.unwrap());
    write_csv(&mut std::io::stdout(), &rows).unwrap();
    Ok(())
}
