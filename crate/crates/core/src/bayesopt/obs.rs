use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng;

/// Two points closer than this (max-abs) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;
/// Half-width of the perturbation applied to a duplicate.
pub const DUPLICATE_JITTER: f64 = 1e-6;

/// Evaluated points on the unit cube with their raw objective values.
///
/// Raw values may be `+∞` for aborted trials; [`ObservationSet::values`]
/// substitutes the worst finite value for them.
#[derive(Clone, Debug)]
pub struct ObservationSet {
    dim: usize,
    points: Vec<Vec<f64>>,
    raw: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ObservationSet {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            points: Vec::new(),
            raw: Vec::new(),
            rng: rng::rng_from(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn raw_values(&self) -> &[f64] {
        &self.raw
    }

    fn is_duplicate(&self, p: &[f64]) -> bool {
        self.points
            .iter()
            .any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
    }

    /// `point`, nudged by a small seeded jitter (kept in the cube) until it
    /// differs from every stored point.
    pub fn deduplicate(&mut self, point: &[f64]) -> Vec<f64> {
        let mut p = point.to_vec();
        while self.is_duplicate(&p) {
            for v in p.iter_mut() {
                *v =
                    (*v + self.rng.gen_range(-DUPLICATE_JITTER..=DUPLICATE_JITTER)).clamp(0.0, 1.0);
            }
        }
        p
    }

    /// Stores an evaluation; the point is deduplicated first and the stored
    /// point is returned. NaN is recorded as `+∞`.
    pub fn insert(&mut self, point: &[f64], f: f64) -> Vec<f64> {
        assert_eq!(point.len(), self.dim, "observation dimension");
        let p = self.deduplicate(point);
        self.points.push(p.clone());
        self.raw.push(if f.is_nan() { f64::INFINITY } else { f });
        p
    }

    /// Which entries are sentinels replaced in [`Self::values`].
    pub fn replaced(&self) -> Vec<bool> {
        self.raw.iter().map(|v| !v.is_finite()).collect()
    }

    /// Values with every non-finite entry replaced by the worst finite one;
    /// `None` when nothing finite has been seen.
    pub fn values(&self) -> Option<Vec<f64>> {
        let worst = self
            .raw
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))?;
        Some(
            self.raw
                .iter()
                .map(|&v| if v.is_finite() { v } else { worst })
                .collect(),
        )
    }

    /// Index and value of the smallest finite observation (first on ties).
    pub fn best(&self) -> Option<(usize, f64)> {
        self.raw
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .fold(None, |b: Option<(usize, f64)>, (i, &v)| match b {
                Some((_, bv)) if bv <= v => b,
                _ => Some((i, v)),
            })
    }
}
