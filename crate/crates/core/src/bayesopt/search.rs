//! The sequential model-based minimization loop on the unit cube.

use std::fmt;
use std::ops::Range;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::acq::propose_next;
use super::hyper::fit_hyperparameters;
use super::obs::ObservationSet;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialPhase {
    Random,
    Guided,
    /// A guided slot that fell back to a random point because no surrogate
    /// could be fitted.
    Fallback,
}

impl fmt::Display for TrialPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialPhase::Random => "random",
            TrialPhase::Guided => "guided",
            TrialPhase::Fallback => "fallback",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub phase: TrialPhase,
    /// Evaluated point on the unit cube.
    pub point: Vec<f64>,
    /// Raw objective; `+∞` for an aborted evaluation.
    pub f: f64,
    /// Smallest finite `f` so far (`+∞` before the first one).
    pub cum_min: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Total trials `N_BO`.
    pub budget: usize,
    /// Random trials `n` before the surrogate takes over.
    pub initial: usize,
    pub seed: u64,
    /// Dimensions sharing a kernel length scale.
    pub groups: Vec<Range<usize>>,
}

impl SearchConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.budget > self.initial && self.initial >= 2) {
            return Err(Error::InvalidConfig(format!(
                "need N_BO > n >= 2, got N_BO={} n={}",
                self.budget, self.initial
            )));
        }
        if self.groups.iter().map(|g| g.len()).sum::<usize>() != dim {
            return Err(Error::InvalidConfig(format!(
                "length-scale groups {:?} do not cover {dim} dimensions",
                self.groups
            )));
        }
        Ok(())
    }
}

fn uniform_point(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.gen()).collect()
}

fn timed<F: Fn(&[f64]) -> f64>(objective: &F, p: &[f64]) -> (f64, f64) {
    let t = Instant::now();
    let f = objective(p);
    (f, t.elapsed().as_secs_f64())
}

fn push_trial(trials: &mut Vec<Trial>, phase: TrialPhase, point: Vec<f64>, f: f64, wall_s: f64) {
    let prev = trials.last().map_or(f64::INFINITY, |t| t.cum_min);
    let cum_min = if f.is_finite() { prev.min(f) } else { prev };
    trials.push(Trial {
        index: trials.len(),
        phase,
        point,
        f,
        cum_min,
        wall_s,
    });
}

/// Minimizes `objective` over `[0, 1]^dim`: `initial` seeded uniform points
/// (evaluated concurrently), then one EI-maximizing proposal at a time.
pub fn bo_minimize<F>(dim: usize, cfg: &SearchConfig, objective: F) -> Result<Vec<Trial>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate(dim)?;
    let mut random = rng::rng_from(rng::keyed_seed(&[cfg.seed, 0]));
    let mut obs = ObservationSet::new(dim, rng::keyed_seed(&[cfg.seed, 1]));
    let mut trials = Vec::with_capacity(cfg.budget);

    let initial: Vec<Vec<f64>> = (0..cfg.initial)
        .map(|_| uniform_point(&mut random, dim))
        .collect();
    let initial: Vec<Vec<f64>> = initial.iter().map(|p| obs.deduplicate(p)).collect();
    let results: Vec<(f64, f64)> = initial.par_iter().map(|p| timed(&objective, p)).collect();
    for (p, (f, wall)) in initial.into_iter().zip(results) {
        let p = obs.insert(&p, f);
        push_trial(&mut trials, TrialPhase::Random, p, f, wall);
    }

    for i in cfg.initial..cfg.budget {
        let surrogate = obs
            .values()
            .and_then(|values| fit_hyperparameters(obs.points(), &values, &cfg.groups).ok());
        let (phase, point) = match surrogate {
            Some(state) => (
                TrialPhase::Guided,
                propose_next(&state, rng::keyed_seed(&[cfg.seed, 2, i as u64])).point,
            ),
            None => {
                log::warn!("trial {i}: no surrogate available, proposing a random point");
                (TrialPhase::Fallback, uniform_point(&mut random, dim))
            }
        };
        let point = obs.deduplicate(&point);
        let (f, wall) = timed(&objective, &point);
        let point = obs.insert(&point, f);
        log::info!("trial {i} ({phase}): f = {f:e}");
        push_trial(&mut trials, phase, point, f, wall);
    }
    Ok(trials)
}

/// Uniform random search with the same bookkeeping, for comparisons.
pub fn random_search<F>(dim: usize, budget: usize, seed: u64, objective: F) -> Vec<Trial>
where
    F: Fn(&[f64]) -> f64,
{
    let mut r = rng::rng_from(rng::keyed_seed(&[seed, 3]));
    let mut trials = Vec::with_capacity(budget);
    for _ in 0..budget {
        let p = uniform_point(&mut r, dim);
        let (f, wall) = timed(&objective, &p);
        push_trial(&mut trials, TrialPhase::Random, p, f, wall);
    }
    trials
}
