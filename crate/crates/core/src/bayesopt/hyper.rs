use std::ops::Range;

use super::gp::{standardization, GpState, Kernel};
use crate::error::{Error, Result};

/// Candidate length scales on the unit cube.
pub const LENGTH_GRID: [f64; 5] = [0.1, 0.2, 0.4, 0.8, 1.6];
/// Candidate signal variances for standardized values.
pub const SIGNAL_GRID: [f64; 3] = [0.5, 1.0, 2.0];

/// Picks the kernel with the largest log marginal likelihood on the grid.
///
/// Dimensions in one group share a length scale, so the grid has
/// `5^groups × 3` points. Equal length scales across groups give the
/// isotropic kernel. If every value is the same the unit kernel is used.
pub fn fit_hyperparameters(
    points: &[Vec<f64>],
    values: &[f64],
    groups: &[Range<usize>],
) -> Result<GpState> {
    if points.len() < 2 {
        return Err(Error::Surrogate(
            "at least two observations are needed".into(),
        ));
    }
    let dim = points[0].len();
    let covered: usize = groups.iter().map(|g| g.len()).sum();
    if covered != dim || groups.iter().any(|g| g.end > dim) {
        return Err(Error::Surrogate(format!(
            "groups {groups:?} do not partition {dim} dimensions"
        )));
    }
    let (mean, _) = standardization(values);
    if values.iter().all(|v| (v - mean).abs() < 1e-12) {
        return GpState::fit(Kernel::unit(dim), points, values);
    }

    let mut best: Option<(f64, GpState)> = None;
    let combos = LENGTH_GRID.len().pow(groups.len() as u32);
    for signal_var in SIGNAL_GRID {
        for combo in 0..combos {
            let mut length_scales = vec![0.0; dim];
            let mut c = combo;
            for g in groups {
                let l = LENGTH_GRID[c % LENGTH_GRID.len()];
                c /= LENGTH_GRID.len();
                length_scales[g.clone()].fill(l);
            }
            let Ok(state) = GpState::fit(
                Kernel {
                    signal_var,
                    length_scales,
                },
                points,
                values,
            ) else {
                continue;
            };
            let lml = state.log_marginal_likelihood();
            if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, state));
            }
        }
    }
    best.map(|(_, s)| s)
        .ok_or_else(|| Error::Surrogate("no kernel on the grid could be fitted".into()))
}
