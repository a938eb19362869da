//! Gaussian-process Bayesian optimization of the attack objective `f(Q)`.

mod acq;
mod awa;
mod ei;
mod gp;
mod hyper;
mod obs;
mod search;

pub use acq::{
    ei_at, propose_next, shifted_halton, Proposal, CANDIDATES, REFINE_PASSES, REFINE_STARTS,
};
pub use awa::{
    awa_optimize, awa_search, best_trial, trial_q, write_timings_csv, write_trials_csv, AwaOutcome,
    BoConfig, Q_GROUPS,
};
pub use ei::{expected_improvement, normal_cdf, normal_pdf, SIGMA_FLOOR};
pub use gp::{
    cholesky, gp_posterior, standardization, GpState, Kernel, Posterior, JITTER_MAX, JITTER_START,
};
pub use hyper::{fit_hyperparameters, LENGTH_GRID, SIGNAL_GRID};
pub use obs::{ObservationSet, DUPLICATE_JITTER, DUPLICATE_TOL};
pub use search::{bo_minimize, random_search, SearchConfig, Trial, TrialPhase};
