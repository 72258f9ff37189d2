//! Bilinear sampling with clamp-to-edge lookups, and backward warping of a
//! right view onto the left one.

use sceneflow::fields::ImageField;
use sceneflow::warp::{sample_bilinear, warp_stereo};

fn main() -> sceneflow::Result<()> {
    // a horizontal ramp: value == x
    let ramp = ImageField::from_fn(8, 4, 1, |_, x, _| x as f64);
    for (x, y) in [(2.25, 1.0), (6.9, 2.5), (7.4, 0.0), (-1.0, 0.0)] {
        let s = sample_bilinear(&ramp, x, y);
        println!("({x:5.2}, {y:4.2}) -> {:.2}  d/dx {:.2}  in bounds {}", s.value[0], s.d_dx[0], s.in_bounds);
    }

    // the right view is the left one shifted 3 px to the left
    let left = ImageField::from_fn(16, 4, 1, |_, x, _| (x as f64 * 0.7).sin());
    let right = ImageField::from_fn(16, 4, 1, |_, x, _| ((x + 3) as f64 * 0.7).sin());
    let (warped, valid) = warp_stereo(&right, &ImageField::filled(16, 4, 1, 3.0))?;
    let err = (0..16)
        .filter(|&x| valid.get(x, 0))
        .map(|x| (warped.get(0, x, 0) - left.get(0, x, 0)).abs())
        .fold(0.0, f64::max);
    println!("stereo warp: {} of 64 pixels in view, max error {err:.1e}", valid.count());
    Ok(())
}
