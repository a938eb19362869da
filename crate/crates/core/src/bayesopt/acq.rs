use rand::Rng;

use super::ei::expected_improvement;
use super::gp::{gp_posterior, GpState};
use crate::rng;

pub const CANDIDATES: usize = 1024;
pub const REFINE_STARTS: usize = 4;
pub const REFINE_PASSES: usize = 20;
pub const REFINE_STEP: f64 = 0.1;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let (mut inv, mut f) = (0.0, 1.0 / b);
    while i > 0 {
        inv += (i % base as u64) as f64 * f;
        i /= base as u64;
        f /= b;
    }
    inv
}

/// `count` Halton points in `[0, 1)^dim` under a seeded random shift modulo 1.
///
/// Panics above 16 dimensions.
pub fn shifted_halton(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
    let mut r = rng::rng_from(seed);
    let shift: Vec<f64> = (0..dim).map(|_| r.gen()).collect();
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|d| (radical_inverse(i, PRIMES[d]) + shift[d]).fract())
                .collect()
        })
        .collect()
}

/// EI of the surrogate at `u`, in standardized units.
pub fn ei_at(state: &GpState, u: &[f64]) -> f64 {
    let p = gp_posterior(state, u);
    expected_improvement(p.mu, p.sigma2, state.f_min())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub point: Vec<f64>,
    pub ei: f64,
}

/// Maximizes EI over the unit cube: score the shifted Halton candidates,
/// then refine the best few coordinate by coordinate with a halving step.
pub fn propose_next(state: &GpState, seed: u64) -> Proposal {
    let dim = state.kernel.dim();
    let candidates = shifted_halton(dim, CANDIDATES, seed);
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (ei_at(state, c), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut best = Proposal {
        point: candidates[scored[0].1].clone(),
        ei: scored[0].0,
    };
    for &(ei0, idx) in scored.iter().take(REFINE_STARTS) {
        let (mut x, mut ei) = (candidates[idx].clone(), ei0);
        let mut step = REFINE_STEP;
        for _ in 0..REFINE_PASSES {
            for d in 0..dim {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[d] = (y[d] + dir * step).clamp(0.0, 1.0);
                    let e = ei_at(state, &y);
                    if e > ei {
                        (x, ei) = (y, e);
                    }
                }
            }
            step *= 0.5;
        }
        if ei > best.ei {
            best = Proposal { point: x, ei };
        }
    }
    best
}
