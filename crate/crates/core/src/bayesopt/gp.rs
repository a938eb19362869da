//! Zero-mean Gaussian-process regression with a squared-exponential kernel.

use crate::error::{Error, Result};

pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-2;

/// `κ(a, b) = s · exp(−½ Σ_i ((a_i − b_i)/ℓ_i)²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
}

impl Kernel {
    pub fn unit(dim: usize) -> Self {
        Self {
            signal_var: 1.0,
            length_scales: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.signal_var * (-0.5 * r2).exp()
    }
}

/// Posterior of `f(Q)` at one point, in standardized units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Posterior {
    pub mu: f64,
    pub sigma2: f64,
}

/// A fitted surrogate: kernel, jitter, Cholesky factor of `K + λI` and the
/// standardization of the observed values.
#[derive(Clone, Debug)]
pub struct GpState {
    pub kernel: Kernel,
    pub jitter: f64,
    pub y_mean: f64,
    pub y_std: f64,
    points: Vec<Vec<f64>>,
    standardized: Vec<f64>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

/// In-place lower Cholesky factor of a row-major SPD matrix; `false` if a
/// pivot is not positive.
pub fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Solves `L y = b` for lower-triangular `L`.
fn forward_sub(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = y`.
fn backward_sub(l: &[f64], n: usize, y: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
}

/// Mean and population standard deviation; a spread below `1e-12` counts as 1.
pub fn standardization(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < 1e-12 { 1.0 } else { std })
}

impl GpState {
    /// Conditions the prior on `values` at `points`, escalating the jitter
    /// by ×10 from `1e-8` until the factorization succeeds or exceeds `1e-2`.
    pub fn fit(kernel: Kernel, points: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        let n = points.len();
        if n == 0 || n != values.len() {
            return Err(Error::Surrogate(format!(
                "{n} points with {} values",
                values.len()
            )));
        }
        if points.iter().any(|p| p.len() != kernel.dim()) {
            return Err(Error::Surrogate(
                "point dimension differs from the kernel".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Surrogate("observations must be finite".into()));
        }
        let (y_mean, y_std) = standardization(values);
        let standardized: Vec<f64> = values.iter().map(|v| (v - y_mean) / y_std).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = kernel.eval(&points[i], &points[j]);
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let mut jitter = JITTER_START;
        loop {
            let mut chol = gram.clone();
            for i in 0..n {
                chol[i * n + i] += jitter;
            }
            if cholesky(&mut chol, n) {
                let mut alpha = standardized.clone();
                forward_sub(&chol, n, &mut alpha);
                backward_sub(&chol, n, &mut alpha);
                return Ok(Self {
                    kernel,
                    jitter,
                    y_mean,
                    y_std,
                    points: points.to_vec(),
                    standardized,
                    chol,
                    alpha,
                });
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(Error::Surrogate(
                    "kernel matrix is not positive definite even with jitter 1e-2".into(),
                ));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Observed values after standardization.
    pub fn standardized(&self) -> &[f64] {
        &self.standardized
    }

    /// Smallest standardized observation.
    pub fn f_min(&self) -> f64 {
        self.standardized
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `log p(y | X)` of the standardized values.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len();
        let fit: f64 = self
            .standardized
            .iter()
            .zip(&self.alpha)
            .map(|(y, a)| y * a)
            .sum();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Maps a standardized mean back to observation units.
    pub fn destandardize(&self, p: Posterior) -> Posterior {
        Posterior {
            mu: self.y_mean + self.y_std * p.mu,
            sigma2: p.sigma2 * self.y_std * self.y_std,
        }
    }
}

/// Posterior mean and variance (standardized units) at `q`; the variance is
/// clamped at 0.
pub fn gp_posterior(state: &GpState, q: &[f64]) -> Posterior {
    let n = state.len();
    let k: Vec<f64> = state
        .points
        .iter()
        .map(|p| state.kernel.eval(q, p))
        .collect();
    let mu = k.iter().zip(&state.alpha).map(|(a, b)| a * b).sum();
    let mut v = k;
    forward_sub(&state.chol, n, &mut v);
    let reduction: f64 = v.iter().map(|x| x * x).sum();
    let sigma2 = (state.kernel.eval(q, q) - reduction).max(0.0);
    Posterior { mu, sigma2 }
}
