//! Linear interpolation between the dispatched and returned parameters for
//! clients that train several epochs over several mini-batches.

use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelUpdate};

/// Per-epoch updates `Δθ̃_{t,e}`, `e = 1..E` (stored 0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxUpdates {
    pub per_epoch: Vec<ModelUpdate>,
}

impl ApproxUpdates {
    pub fn epochs(&self) -> usize {
        self.per_epoch.len()
    }

    /// `Δθ̃_{t,e}` for a 1-based epoch.
    pub fn epoch(&self, e: usize) -> Option<&ModelUpdate> {
        e.checked_sub(1).and_then(|i| self.per_epoch.get(i))
    }
}

/// `θ̃_{t,e} = ((θ_{t+1} − θ_t)/E)·e + θ_t`; `e = 0` gives `θ_t` exactly.
pub fn interpolated_params(
    theta_t: &ModelParams,
    theta_next: &ModelParams,
    epochs: usize,
    e: usize,
) -> Result<ModelParams> {
    if epochs < 1 || e > epochs {
        return Err(Error::InvalidConfig(format!(
            "epoch {e} outside 0..={epochs}"
        )));
    }
    if e == 0 {
        return Ok(theta_t.clone());
    }
    let frac = e as f64 / epochs as f64;
    theta_next.zip_with(theta_t, |n, t| (n - t) * frac + t)
}

/// Splits `θ_{t+1} − θ_t` into `E` equal per-epoch updates.
///
/// Consecutive differences of the interpolated parameters are all
/// `(θ_{t+1} − θ_t)/E`; that value is used directly so the entries are
/// bitwise identical.
pub fn approximate_updates(
    theta_t: &ModelParams,
    theta_next: &ModelParams,
    epochs: usize,
) -> Result<ApproxUpdates> {
    if epochs < 1 {
        return Err(Error::InvalidConfig("E must be at least 1".into()));
    }
    let delta = theta_next.sub(theta_t)?;
    let step = if epochs == 1 {
        delta
    } else {
        delta.scale(1.0 / epochs as f64)
    };
    Ok(ApproxUpdates {
        per_epoch: vec![step; epochs],
    })
}
