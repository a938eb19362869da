/// Adam moments over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(dim: usize) -> Self {
        Self::with_hyper(dim, Self::BETA1, Self::BETA2, Self::EPS)
    }

    pub fn with_hyper(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn steps(&self) -> u32 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Panics if the three lengths disagree.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], gradient: &[f64], lr: f64) {
    assert_eq!(params.len(), state.dim(), "adam: parameter length");
    assert_eq!(gradient.len(), state.dim(), "adam: gradient length");
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = gradient[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}
