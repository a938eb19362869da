//! Tuning the weight vector `Q` of the weighted attack.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::search::{bo_minimize, SearchConfig, Trial};
use crate::attack::{
    rec_attack, AttackConfig, AttackOutcome, AttackProblem, LossKind, QBounds, WeightVectorQ,
};
use crate::error::{Error, Result};

/// `q_*` share one length scale and `p_*` another.
pub const Q_GROUPS: [Range<usize>; 2] = [0..4, 4..6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Total trials `N_BO`.
    pub n_bo: usize,
    /// Random initial trials `n`.
    pub n_init: usize,
    pub bounds: QBounds,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            n_bo: 50,
            n_init: 12,
            bounds: QBounds::default(),
            seed: 0,
        }
    }
}

impl BoConfig {
    fn search(&self) -> SearchConfig {
        SearchConfig {
            budget: self.n_bo,
            initial: self.n_init,
            seed: self.seed,
            groups: Q_GROUPS.to_vec(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AwaOutcome {
    pub q_star: WeightVectorQ,
    /// Trial that produced `q_star`.
    pub best_trial: usize,
    pub trials: Vec<Trial>,
    /// The attack rerun at `q_star`.
    pub attack: AttackOutcome,
}

/// `Q` of a trial.
pub fn trial_q(trial: &Trial, bounds: &QBounds) -> WeightVectorQ {
    WeightVectorQ::from_unit(&trial.point, bounds)
}

/// Runs every tuning trial. Each trial attacks with the weighted loss from
/// the same initial dummy data, so trials differ only in `Q`.
pub fn awa_search(
    problem: &AttackProblem,
    atk: &AttackConfig,
    bo: &BoConfig,
) -> Result<Vec<Trial>> {
    bo.bounds.validate()?;
    atk.validate()?;
    let atk = AttackConfig {
        loss_kind: LossKind::Weighted,
        ..*atk
    };
    bo_minimize(WeightVectorQ::DIM, &bo.search(), |u| {
        let q = WeightVectorQ::from_unit(u, &bo.bounds);
        match rec_attack(&q, problem, &atk) {
            Ok(out) => out.f_value,
            Err(e) => {
                log::warn!("attack at {q:?} failed: {e}");
                f64::INFINITY
            }
        }
    })
}

/// Index of the trial with the smallest finite objective (first on ties).
pub fn best_trial(trials: &[Trial]) -> Result<usize> {
    trials
        .iter()
        .filter(|t| t.f.is_finite())
        .min_by(|a, b| a.f.total_cmp(&b.f).then(a.index.cmp(&b.index)))
        .map(|t| t.index)
        .ok_or(Error::AllTrialsDiverged(trials.len()))
}

/// Tunes `Q`, then reruns the attack at the best `Q*` for the final reconstruction.
pub fn awa_optimize(
    problem: &AttackProblem,
    atk: &AttackConfig,
    bo: &BoConfig,
) -> Result<AwaOutcome> {
    let trials = awa_search(problem, atk, bo)?;
    let best = best_trial(&trials)?;
    let q_star = trial_q(&trials[best], &bo.bounds);
    let attack = rec_attack(
        &q_star,
        problem,
        &AttackConfig {
            loss_kind: LossKind::Weighted,
            ..*atk
        },
    )?;
    Ok(AwaOutcome {
        q_star,
        best_trial: best,
        trials,
        attack,
    })
}

/// Trial log without wall times, so identical runs give identical files.
pub fn write_trials_csv(path: &Path, trials: &[Trial], bounds: &QBounds) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "trial,phase,q_cv,q_bn,q_fc,q_en,p_mean,p_var,f,cum_min"
    )?;
    for t in trials {
        let q = trial_q(t, bounds).to_array();
        write!(out, "{},{}", t.index, t.phase)?;
        for v in q {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{},{}", t.f, t.cum_min)?;
    }
    out.flush()?;
    Ok(())
}

/// Wall time of each trial in seconds.
pub fn write_timings_csv(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "trial,wall_s")?;
    for t in trials {
        writeln!(out, "{},{:.6}", t.index, t.wall_s)?;
    }
    out.flush()?;
    Ok(())
}
