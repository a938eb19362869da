//! Layer weights for the weighted matching loss: per-kind linear schedules
//! plus the error-driven enhancement override.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerPartition, ModelUpdate};

/// Guard for relative errors whose reference statistic vanishes.
pub const REL_ERR_DENOM_FLOOR: f64 = 1e-12;

/// The tuning vector `Q = (q_cv, q_bn, q_fc, q_en, p_mean, p_var)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVectorQ {
    pub q_cv: f64,
    pub q_bn: f64,
    pub q_fc: f64,
    pub q_en: f64,
    pub p_mean: f64,
    pub p_var: f64,
}

/// Axis-aligned box over the six components of `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QBounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl Default for QBounds {
    /// `q_*` in `[1, 1000]`, `p_*` in `[0, 0.5]`.
    fn default() -> Self {
        Self {
            lower: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0],
            upper: [1000.0, 1000.0, 1000.0, 1000.0, 0.5, 0.5],
        }
    }
}

impl QBounds {
    pub fn validate(&self) -> Result<()> {
        for i in 0..6 {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "bound {i} is not a finite interval: [{lo}, {hi}]"
                )));
            }
        }
        if self.lower[..4].iter().any(|&v| v <= 0.0)
            || self.lower[4..].iter().any(|&v| v < 0.0)
            || self.upper[4..].iter().any(|&v| v > 1.0)
        {
            return Err(Error::InvalidConfig(
                "layer weights must stay positive and proportions within [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, q: &WeightVectorQ) -> bool {
        q.to_array()
            .iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

impl WeightVectorQ {
    pub const DIM: usize = 6;

    pub fn new(q_cv: f64, q_bn: f64, q_fc: f64, q_en: f64, p_mean: f64, p_var: f64) -> Self {
        Self {
            q_cv,
            q_bn,
            q_fc,
            q_en,
            p_mean,
            p_var,
        }
    }

    /// All schedule weights 1 and no enhancement: the plain matching loss.
    pub fn unweighted() -> Self {
        Self::new(1.0, 1.0, 1.0, 1.0, 0.0, 0.0)
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.q_cv,
            self.q_bn,
            self.q_fc,
            self.q_en,
            self.p_mean,
            self.p_var,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    /// Checks the box bounds.
    pub fn validated(self, bounds: &QBounds) -> Result<Self> {
        if bounds.contains(&self) {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(format!(
                "Q = {:?} lies outside {:?}",
                self.to_array(),
                bounds
            )))
        }
    }

    /// Maps a point of the unit 6-cube into `bounds`.
    pub fn from_unit(u: &[f64], bounds: &QBounds) -> Self {
        let mut v = [0.0; 6];
        for i in 0..6 {
            v[i] = bounds.lower[i] + u[i].clamp(0.0, 1.0) * (bounds.upper[i] - bounds.lower[i]);
        }
        Self::from_array(v)
    }

    pub fn to_unit(&self, bounds: &QBounds) -> [f64; 6] {
        let a = self.to_array();
        let mut u = [0.0; 6];
        for i in 0..6 {
            let span = bounds.upper[i] - bounds.lower[i];
            u[i] = if span > 0.0 {
                (a[i] - bounds.lower[i]) / span
            } else {
                0.0
            };
        }
        u
    }
}

/// Linear ramp from 1 at the first layer of a kind to `top` at its last one;
/// a kind with a single layer gets `top`.
fn ramp(count: usize, top: f64) -> impl Iterator<Item = f64> {
    (0..count).map(move |r| {
        if count == 1 {
            top
        } else {
            (top - 1.0) / (count - 1) as f64 * r as f64 + 1.0
        }
    })
}

/// Base weights `q^(l)` for every layer before enhancement.
pub fn weight_schedule(q: &WeightVectorQ, partition: &LayerPartition) -> Vec<f64> {
    let mut w = vec![0.0; partition.num_layers()];
    for (indices, top) in [
        (&partition.conv, q.q_cv),
        (&partition.batch_norm, q.q_bn),
        (&partition.fully_connected, q.q_fc),
    ] {
        for (&l, v) in indices.iter().zip(ramp(indices.len(), top)) {
            w[l] = v;
        }
    }
    w
}

/// Relative errors of one layer's update statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerErrors {
    pub mean: f64,
    pub var: f64,
}

fn mean_and_var(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// `e_mean` and `e_var` per layer: `|stat(Δθ̂) − stat(Δθ)| / max(|stat(Δθ)|, 1e-12)`
/// over all scalar entries of the layer, with population variance.
pub fn relative_errors(delta_hat: &ModelUpdate, delta: &ModelUpdate) -> Result<Vec<LayerErrors>> {
    if !delta_hat.same_layout(delta) {
        return Err(Error::ArchitectureMismatch(
            "updates have different layer layouts".into(),
        ));
    }
    Ok(delta_hat
        .layers()
        .iter()
        .zip(delta.layers())
        .map(|(h, d)| {
            let (mh, vh) = mean_and_var(h.values());
            let (md, vd) = mean_and_var(d.values());
            LayerErrors {
                mean: (mh - md).abs() / md.abs().max(REL_ERR_DENOM_FLOOR),
                var: (vh - vd).abs() / vd.abs().max(REL_ERR_DENOM_FLOOR),
            }
        })
        .collect())
}

/// Indices of the `⌈p·L⌉` largest values, ties broken towards the lower index.
pub fn top_fraction(values: &[f64], p: f64) -> Vec<usize> {
    // The small offset keeps products like 0.3·10 from rounding up past an integer.
    let count = ((p * values.len() as f64) - 1e-9)
        .ceil()
        .clamp(0.0, values.len() as f64) as usize;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(count);
    order.sort_unstable();
    order
}

/// `P = P_mean ∩ P_var`, sorted ascending.
pub fn select_enhanced_layers(errors: &[LayerErrors], p_mean: f64, p_var: f64) -> Vec<usize> {
    let means: Vec<f64> = errors.iter().map(|e| e.mean).collect();
    let vars: Vec<f64> = errors.iter().map(|e| e.var).collect();
    let p_mean_set = top_fraction(&means, p_mean);
    let p_var_set = top_fraction(&vars, p_var);
    p_mean_set
        .into_iter()
        .filter(|l| p_var_set.contains(l))
        .collect()
}

/// Final per-layer weights: the base schedule with `q_en` on every enhanced layer.
pub fn enhanced_weights(base: &[f64], enhanced: &[usize], q_en: f64) -> Vec<f64> {
    let mut w = base.to_vec();
    for &l in enhanced {
        w[l] = q_en;
    }
    w
}
