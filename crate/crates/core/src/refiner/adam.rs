use super::params::RefinerParams;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Defaults `β = (0.9, 0.999)`, `lr = 1e-4`, `ε = 1e-8`.
    pub fn with_defaults(len: usize) -> Self {
        Self::new(len, 1e-4, 0.9, 0.999, 1e-8)
    }

    /// Updates every tensor of `params` in place.
    pub fn update(&mut self, params: &mut RefinerParams, grads: &RefinerParams) {
        self.step += 1;
        let mut offset = 0;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (p, g) in params.tensors_mut().zip(grads.tensors()) {
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            apply(p, g, m, v, self.lr, b1, b2, self.eps, c1, c2);
            offset += p.len();
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn apply(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, b1: f64, b2: f64, eps: f64, c1: f64, c2: f64) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// One bias-corrected Adam update of a flat parameter vector.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    apply(
        params,
        grads,
        &mut state.m,
        &mut state.v,
        state.lr,
        state.beta1,
        state.beta2,
        state.eps,
        c1,
        c2,
    );
}
