//! Reconstruction quality: MSE, PSNR, global SSIM and batch assignment.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::Array;
use crate::error::{Error, Result};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Dynamic range `H` of pixel values.
pub const PIXEL_RANGE: f64 = 1.0;
/// MSE below this counts as a perfect reconstruction for PSNR.
pub const PSNR_MSE_FLOOR: f64 = 1e-12;
pub const MAX_MATCH_BATCH: usize = 16;

/// Ground truth and a reconstruction clamped to `[0, 1]`.
///
/// Images are `[c, h, w]`; any other rank is treated as one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    truth: Array,
    recon: Array,
}

impl ImagePair {
    pub fn new(truth: &Array, recon: &Array) -> Result<Self> {
        if truth.shape() != recon.shape() {
            return Err(Error::Metric(format!(
                "shapes differ: {:?} vs {:?}",
                truth.shape(),
                recon.shape()
            )));
        }
        let clamped = Array::new(
            recon.shape().to_vec(),
            recon.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )?;
        Ok(Self {
            truth: truth.clone(),
            recon: clamped,
        })
    }

    pub fn truth(&self) -> &Array {
        &self.truth
    }

    pub fn recon(&self) -> &Array {
        &self.recon
    }

    fn channels(&self) -> usize {
        if self.truth.shape().len() == 3 {
            self.truth.shape()[0]
        } else {
            1
        }
    }
}

pub fn mse(pair: &ImagePair) -> f64 {
    let (a, b) = (pair.truth.data(), pair.recon.data());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `10·log10(max_D² / MSE)` with `max_D` the largest ground-truth pixel;
/// `+∞` when the MSE is below `1e-12`.
pub fn psnr(pair: &ImagePair) -> Result<f64> {
    let max_d = pair
        .truth
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max_d <= 0.0 {
        return Err(Error::Metric("PSNR of an all-zero ground truth".into()));
    }
    let e = mse(pair);
    Ok(if e < PSNR_MSE_FLOOR {
        f64::INFINITY
    } else {
        10.0 * (max_d * max_d / e).log10()
    })
}

/// SSIM from whole-channel statistics (population moments), averaged over channels.
pub fn ssim(pair: &ImagePair) -> f64 {
    let c1 = (SSIM_K1 * PIXEL_RANGE).powi(2);
    let c2 = (SSIM_K2 * PIXEL_RANGE).powi(2);
    let channels = pair.channels();
    let plane = pair.truth.len() / channels;
    let mut total = 0.0;
    for c in 0..channels {
        let a = &pair.truth.data()[c * plane..(c + 1) * plane];
        let b = &pair.recon.data()[c * plane..(c + 1) * plane];
        let n = plane as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
            cov += (x - ma) * (y - mb);
        }
        let (va, vb, cov) = (va / n, vb / n, cov / n);
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / channels as f64
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn deserialize_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!(
            "expected a number or \"inf\", got {t:?}"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mse: f64,
    #[serde(serialize_with = "serialize_db", deserialize_with = "deserialize_db")]
    pub psnr: f64,
    pub ssim: f64,
}

pub fn image_metrics(pair: &ImagePair) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        mse: mse(pair),
        psnr: psnr(pair)?,
        ssim: ssim(pair),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedImage {
    /// Ground-truth index.
    pub truth: usize,
    /// Reconstruction assigned to it.
    pub recon: usize,
    #[serde(flatten)]
    pub metrics: ImageMetrics,
}

/// Metrics report for one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMatch {
    /// `permutation[i]` is the reconstruction matched to ground truth `i`.
    pub permutation: Vec<usize>,
    pub per_image: Vec<MatchedImage>,
    pub mean: ImageMetrics,
}

/// Minimum-cost perfect assignment on a square row-major cost matrix;
/// `result[row] = column`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // Potentials formulation with 1-based sentinels at index 0.
    let inf = f64::INFINITY;
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Pairs reconstructions with ground truth to minimize total MSE and scores
/// every matched pair.
pub fn match_batches(truth: &[Array], recon: &[Array]) -> Result<BatchMatch> {
    let n = truth.len();
    if n != recon.len() {
        return Err(Error::Metric(format!(
            "{n} ground-truth images but {} reconstructions",
            recon.len()
        )));
    }
    if n == 0 || n > MAX_MATCH_BATCH {
        return Err(Error::Metric(format!(
            "batch size {n} outside 1..={MAX_MATCH_BATCH}"
        )));
    }
    let mut pairs = Vec::with_capacity(n * n);
    for t in truth {
        for r in recon {
            pairs.push(ImagePair::new(t, r)?);
        }
    }
    let cost: Vec<f64> = pairs.iter().map(mse).collect();
    let permutation = hungarian(&cost, n);
    let per_image = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            Ok(MatchedImage {
                truth: i,
                recon: j,
                metrics: image_metrics(&pairs[i * n + j])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = n as f64;
    let mean = ImageMetrics {
        mse: per_image.iter().map(|m| m.metrics.mse).sum::<f64>() / k,
        psnr: per_image.iter().map(|m| m.metrics.psnr).sum::<f64>() / k,
        ssim: per_image.iter().map(|m| m.metrics.ssim).sum::<f64>() / k,
    };
    Ok(BatchMatch {
        permutation,
        per_image,
        mean,
    })
}

/// Splits an `[n, ...]` batch into its samples.
pub fn split_batch(batch: &Array) -> Vec<Array> {
    let n = batch.shape()[0];
    let d = batch.len() / n;
    let shape = batch.shape()[1..].to_vec();
    batch
        .data()
        .chunks(d)
        .map(|c| {
            Array::new(
                if shape.is_empty() {
                    vec![1]
                } else {
                    shape.clone()
                },
                c.to_vec(),
            )
            .expect("non-empty sample")
        })
        .collect()
}
