use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Below this posterior standard deviation EI falls back to the plain improvement.
pub const SIGMA_FLOOR: f64 = 1e-12;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Expected improvement below `f_min` of a normal `N(μ, σ²)`.
pub fn expected_improvement(mu: f64, sigma2: f64, f_min: f64) -> f64 {
    let sigma = sigma2.max(0.0).sqrt();
    let gap = f_min - mu;
    if sigma < SIGMA_FLOOR {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}
