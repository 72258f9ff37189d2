//! 3×3 convolution with zero padding on channel-planar `f64` buffers.
//!
//! Weights are laid out `[out][in][ky][kx]`, which is also the row-major
//! `out × (in·9)` matrix used by the GEMM formulation: each band of image
//! rows is unfolded into an `(in·9) × pixels` column matrix and multiplied.

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
/// Pixels per unfolded band; bounds the column buffer at any width.
const BAND_PIXELS: usize = 2048;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `c = a·b + beta·c` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, rs: usize, cc: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    assert!(k == 0 || last(m, rsa, k, csa) < a.len());
    assert!(k == 0 || last(k, rsb, n, csb) < b.len());
    assert!(last(m, rsc, n, csc) < c.len());
    // SAFETY: every index the kernel touches is bounded by the asserts above,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Rows `[y0, y1)` per band.
fn bands(w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let rows = (BAND_PIXELS / w.max(1)).max(1);
    (0..h).step_by(rows).map(move |y0| (y0, (y0 + rows).min(h)))
}

#[inline]
fn tap_offset(t: usize) -> (isize, isize) {
    ((t % KERNEL) as isize - 1, (t / KERNEL) as isize - 1)
}

/// Column span `[x0, x1)` of output pixels that read input column `x + dx`.
#[inline]
fn span(w: usize, dx: isize) -> (usize, usize) {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    (x0, x1.max(x0))
}

/// Unfolds rows `[y0, y1)` of `input` into `cols` (`(cin·9) × band` pixels).
fn unfold(input: &[f64], cin: usize, w: usize, h: usize, (y0, y1): (usize, usize), cols: &mut [f64]) {
    let n = w * h;
    let np = (y1 - y0) * w;
    cols[..cin * TAPS * np].fill(0.0);
    for i in 0..cin {
        let src = &input[i * n..(i + 1) * n];
        for t in 0..TAPS {
            let (dx, dy) = tap_offset(t);
            let (x0, x1) = span(w, dx);
            let row = &mut cols[(i * TAPS + t) * np..][..np];
            for y in y0..y1 {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let sx0 = (x0 as isize + dx) as usize;
                row[(y - y0) * w + x0..(y - y0) * w + x1].copy_from_slice(&src[sy as usize * w + sx0..][..x1 - x0]);
            }
        }
    }
}

/// Adjoint of [`unfold`]: scatters `cols` back onto `grad`.
fn fold(cols: &[f64], cin: usize, w: usize, h: usize, (y0, y1): (usize, usize), grad: &mut [f64]) {
    let n = w * h;
    let np = (y1 - y0) * w;
    for i in 0..cin {
        let dst = &mut grad[i * n..(i + 1) * n];
        for t in 0..TAPS {
            let (dx, dy) = tap_offset(t);
            let (x0, x1) = span(w, dx);
            let row = &cols[(i * TAPS + t) * np..][..np];
            for y in y0..y1 {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let sx0 = (x0 as isize + dx) as usize;
                let d = &mut dst[sy as usize * w + sx0..][..x1 - x0];
                for (d, s) in d.iter_mut().zip(&row[(y - y0) * w + x0..(y - y0) * w + x1]) {
                    *d += s;
                }
            }
        }
    }
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn band_buffer(&self, w: usize, h: usize) -> Vec<f64> {
        let rows = (BAND_PIXELS / w.max(1)).max(1).min(h);
        vec![0.0; self.in_channels * TAPS * rows * w]
    }

    /// `input` holds `in_channels` planes of `w × h`; returns `out_channels` planes.
    pub fn forward(&self, input: &[f64], w: usize, h: usize) -> Vec<f64> {
        let n = w * h;
        let (cin, cout) = (self.in_channels, self.out_channels);
        assert_eq!(input.len(), n * cin);
        let mut out = vec![0.0; n * cout];
        for (o, plane) in out.chunks_mut(n).enumerate() {
            plane.fill(self.bias[o]);
        }
        let mut cols = self.band_buffer(w, h);
        let k = cin * TAPS;
        for band in bands(w, h) {
            let np = (band.1 - band.0) * w;
            unfold(input, cin, w, h, band, &mut cols);
            gemm(cout, k, np, &self.weight, (k, 1), &cols, (np, 1), 1.0, &mut out[band.0 * w..], (n, 1));
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `input` when `need_input` is set.
    pub fn backward(
        &self,
        input: &[f64],
        upstream: &[f64],
        w: usize,
        h: usize,
        grad: &mut ConvLayer,
        need_input: bool,
    ) -> Option<Vec<f64>> {
        let n = w * h;
        let (cin, cout) = (self.in_channels, self.out_channels);
        assert_eq!(input.len(), n * cin);
        assert_eq!(upstream.len(), n * cout);
        for (b, g) in grad.bias.iter_mut().zip(upstream.chunks(n)) {
            *b += g.iter().sum::<f64>();
        }
        let k = cin * TAPS;
        let mut cols = self.band_buffer(w, h);
        let mut gcols = if need_input { self.band_buffer(w, h) } else { Vec::new() };
        let mut gin = if need_input { vec![0.0; n * cin] } else { Vec::new() };
        for band in bands(w, h) {
            let np = (band.1 - band.0) * w;
            let g = &upstream[band.0 * w..];
            unfold(input, cin, w, h, band, &mut cols);
            gemm(cout, np, k, g, (n, 1), &cols, (1, np), 1.0, &mut grad.weight, (k, 1));
            if need_input {
                gemm(k, cout, np, &self.weight, (1, k), g, (n, 1), 0.0, &mut gcols, (np, 1));
                fold(&gcols, cin, w, h, band, &mut gin);
            }
        }
        need_input.then_some(gin)
    }
}
