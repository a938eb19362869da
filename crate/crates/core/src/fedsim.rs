//! FedAvg simulation: local mini-batch descent on one client, model-update
//! extraction and server-side weighted averaging.
//!
//! A [`RoundRecord`] holds exactly what an honest-but-curious server sees for
//! one client: the dispatched parameters, the returned parameters, the
//! training hyperparameters and the dataset size.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, Array, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{self, ArchKind, Architecture, InputShape, ModelParams, ModelUpdate, ParamSet};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Local epochs `E`.
    pub epochs: usize,
    /// Mini-batches per epoch `B`.
    pub batches: usize,
    /// Learning rate `η`.
    pub lr: f64,
    /// Mini-batch size `M`.
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl TrainingConfig {
    pub fn new(
        epochs: usize,
        batches: usize,
        lr: f64,
        batch_size: usize,
        shuffle_seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            epochs,
            batches,
            lr,
            batch_size,
            shuffle_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "E, B and M must be at least 1 (got E={}, B={}, M={})",
                self.epochs, self.batches, self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    /// Client dataset size `N = B·M`.
    pub fn dataset_size(&self) -> usize {
        self.batches * self.batch_size
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// E = 1, B = 1
    S1,
    /// E > 1, B = 1
    S2,
    /// E = 1, B > 1
    S3,
    /// E > 1, B > 1
    S4,
}

pub fn scenario_of(config: &TrainingConfig) -> Scenario {
    match (config.epochs > 1, config.batches > 1) {
        (false, false) => Scenario::S1,
        (true, false) => Scenario::S2,
        (false, true) => Scenario::S3,
        (true, true) => Scenario::S4,
    }
}

/// A client's private samples `x: [N, c, h, w]` with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Array, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.shape().first() != Some(&labels.len()) {
            return Err(Error::InvalidConfig(format!(
                "{} labels for samples of shape {:?}",
                labels.len(),
                x.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Self { x, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.x.len() / self.len()
    }

    /// Samples and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Array, Vec<usize>) {
        let d = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.x.data()[i * d..(i + 1) * d]);
        }
        let mut shape = self.x.shape().to_vec();
        shape[0] = indices.len();
        (
            Array::from_parts(shape, data),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Per-epoch permutations of `0..N` actually used by the client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleTrace {
    pub permutations: Vec<Vec<usize>>,
}

impl ShuffleTrace {
    /// Sample indices of mini-batch `b` in epoch `e` (both 0-based).
    pub fn batch(&self, epoch: usize, b: usize, batch_size: usize) -> &[usize] {
        &self.permutations[epoch][b * batch_size..(b + 1) * batch_size]
    }
}

/// The permutation for `(shuffle_seed, round, epoch)`; epochs are independent streams.
pub fn epoch_permutation(shuffle_seed: u64, round: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = rng::rng_from(rng::keyed_seed(&[shuffle_seed, round, epoch as u64]));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// `∇_θ ℓ(X, Y)` at `theta` for a batch.
pub fn loss_gradient(
    arch: &Architecture,
    theta: &ModelParams,
    x: &Array,
    labels: &[usize],
) -> Result<ModelUpdate> {
    let tape = Tape::new();
    let params = theta.to_tensors(Some(&tape));
    let loss = model::forward_loss(arch, &params, &Tensor::constant(x.clone()), labels)?;
    let flat: Vec<Tensor> = params.iter().flatten().cloned().collect();
    let g = grad(&loss, &flat, false)?;
    let mut it = g.values.into_iter();
    let grads: Vec<Vec<Tensor>> = params
        .iter()
        .map(|layer| layer.iter().map(|_| it.next().unwrap()).collect())
        .collect();
    Ok(ParamSet::from_tensors(theta, &grads))
}

/// One local step `θ := θ − η ∇_θ ℓ(X_b, Y_b)`.
pub fn sgd_step(
    arch: &Architecture,
    theta: &ModelParams,
    x: &Array,
    labels: &[usize],
    lr: f64,
) -> Result<ModelParams> {
    if lr == 0.0 {
        return Ok(theta.clone());
    }
    let g = loss_gradient(arch, theta, x, labels)?;
    theta.zip_with(&g, |p, d| p - lr * d)
}

/// Local training for one client: `E` epochs, each reshuffling the data and
/// stepping through `B` contiguous mini-batches of the permuted order.
pub fn client_update(
    arch: &Architecture,
    theta: &ModelParams,
    data: &Dataset,
    config: &TrainingConfig,
    round: u64,
) -> Result<(ModelParams, ShuffleTrace)> {
    config.validate()?;
    if data.len() != config.dataset_size() {
        return Err(Error::InvalidConfig(format!(
            "dataset of {} samples is not divisible into B={} mini-batches of M={}",
            data.len(),
            config.batches,
            config.batch_size
        )));
    }
    if data.classes != arch.classes {
        return Err(Error::ArchitectureMismatch(format!(
            "dataset has {} classes, model has {}",
            data.classes, arch.classes
        )));
    }
    let mut current = theta.clone();
    let mut permutations = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let perm = epoch_permutation(config.shuffle_seed, round, epoch, data.len());
        for b in 0..config.batches {
            let (xb, yb) = data.gather(&perm[b * config.batch_size..(b + 1) * config.batch_size]);
            current = sgd_step(arch, &current, &xb, &yb, config.lr)?;
        }
        permutations.push(perm);
    }
    Ok((current, ShuffleTrace { permutations }))
}

/// Everything the server observes about one client in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub arch: Architecture,
    pub theta_start: ModelParams,
    pub theta_end: ModelParams,
    pub config: TrainingConfig,
    pub dataset_size: usize,
    pub round: u64,
}

/// `Δθ_t = θ_{t+1} − θ_t`, layer by layer.
pub fn model_update(record: &RoundRecord) -> Result<ModelUpdate> {
    record.theta_end.sub(&record.theta_start)
}

/// `θ_{t+1} = Σ_k (N_k / N_K) θ_k`.
pub fn server_aggregate(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::InvalidConfig("no client updates to aggregate".into()))?;
    if updates.iter().any(|(_, n)| *n == 0) {
        return Err(Error::InvalidConfig(
            "client dataset sizes must be positive".into(),
        ));
    }
    if updates.iter().any(|(p, _)| !p.same_layout(first)) {
        return Err(Error::ArchitectureMismatch(
            "clients returned different architectures".into(),
        ));
    }
    if updates.iter().all(|(p, _)| p == first) {
        return Ok(first.clone());
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    let mut acc = first.scale(0.0);
    for (p, n) in updates {
        let w = *n as f64 / total as f64;
        acc = acc.zip_with(p, |a, v| a + w * v)?;
    }
    Ok(acc)
}

/// One FedAvg round over `clients` (run concurrently), aggregated on the server.
pub fn fedavg_round(
    arch: &Architecture,
    theta: &ModelParams,
    clients: &[Dataset],
    config: &TrainingConfig,
    round: u64,
) -> Result<ModelParams> {
    let returned = clients
        .par_iter()
        .enumerate()
        .map(|(k, data)| {
            let cfg = TrainingConfig {
                shuffle_seed: rng::keyed_seed(&[config.shuffle_seed, k as u64]),
                ..*config
            };
            client_update(arch, theta, data, &cfg, round).map(|(p, _)| (p, data.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    server_aggregate(&returned)
}

/// JSON sidecar written next to the two parameter files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMeta {
    #[serde(rename = "E")]
    pub epochs: usize,
    #[serde(rename = "B")]
    pub batches: usize,
    pub eta: f64,
    #[serde(rename = "M")]
    pub batch_size: usize,
    #[serde(rename = "N")]
    pub dataset_size: usize,
    pub shuffle_seed: u64,
    pub arch: ArchKind,
    pub input: InputShape,
    pub classes: usize,
    pub round: u64,
}

pub const THETA_START_FILE: &str = "theta_t.bin";
pub const THETA_END_FILE: &str = "theta_next.bin";
pub const ROUND_META_FILE: &str = "round.json";

impl RoundRecord {
    pub fn meta(&self) -> RoundMeta {
        RoundMeta {
            epochs: self.config.epochs,
            batches: self.config.batches,
            eta: self.config.lr,
            batch_size: self.config.batch_size,
            dataset_size: self.dataset_size,
            shuffle_seed: self.config.shuffle_seed,
            arch: self.arch.kind,
            input: self.arch.input,
            classes: self.arch.classes,
            round: self.round,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        model::write_params(&dir.join(THETA_START_FILE), &self.arch, &self.theta_start)?;
        model::write_params(&dir.join(THETA_END_FILE), &self.arch, &self.theta_end)?;
        fs::write(
            dir.join(ROUND_META_FILE),
            serde_json::to_string_pretty(&self.meta())? + "\n",
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: RoundMeta =
            serde_json::from_str(&fs::read_to_string(dir.join(ROUND_META_FILE))?)?;
        let (arch_a, theta_start) = model::read_params(&dir.join(THETA_START_FILE))?;
        let (arch_b, theta_end) = model::read_params(&dir.join(THETA_END_FILE))?;
        let arch = Architecture::new(meta.arch, meta.input, meta.classes)?;
        if arch != arch_a || arch != arch_b {
            return Err(Error::ArchitectureMismatch(format!(
                "{} declares {:?} but the parameter files hold {:?} and {:?}",
                dir.display(),
                arch,
                arch_a,
                arch_b
            )));
        }
        let config = TrainingConfig::new(
            meta.epochs,
            meta.batches,
            meta.eta,
            meta.batch_size,
            meta.shuffle_seed,
        )?;
        if meta.dataset_size != config.dataset_size() {
            return Err(Error::InvalidConfig(format!(
                "N={} differs from B·M={}",
                meta.dataset_size,
                config.dataset_size()
            )));
        }
        Ok(Self {
            arch,
            theta_start,
            theta_end,
            config,
            dataset_size: meta.dataset_size,
            round: meta.round,
        })
    }
}
