//! Small raster filters shared by the losses and the matcher.

/// Sum over the truncated `(2r+1)^2` window around each pixel.
pub(crate) fn box_sum(plane: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = row[lo..=hi].iter().sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let dst = &mut out[y * w..(y + 1) * w];
        for yy in lo..=hi {
            for (d, s) in dst.iter_mut().zip(&rows[yy * w..(yy + 1) * w]) {
                *d += s;
            }
        }
    }
    out
}
