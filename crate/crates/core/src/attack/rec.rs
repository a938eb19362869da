//! The inner reconstruction loop: Adam on dummy data against the matching loss.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, nn, Array, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fedsim::{scenario_of, RoundRecord, Scenario, TrainingConfig};
use crate::model::{self, layer_partition, Architecture, ModelParams, ModelUpdate};
use crate::rng;

use super::adam::{adam_step, AdamState};
use super::approx::{approximate_updates, interpolated_params};
use super::replicate::{
    full_batch_epoch_orders, matching_loss_unweighted, replicate_update_ordered, update_values,
    weighted_loss_from_base, TensorUpdate,
};
use super::weights::{weight_schedule, WeightVectorQ};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Unweighted,
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// `N_AT`.
    pub iterations: usize,
    /// `η̂`.
    pub lr: f64,
    pub loss_kind: LossKind,
    /// 1-based epoch whose interpolated update is attacked when the client
    /// ran several epochs over several mini-batches.
    pub target_epoch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_seed: u64,
    pub optimize_labels: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr: 0.1,
            loss_kind: LossKind::Weighted,
            target_epoch: 1,
            beta1: AdamState::BETA1,
            beta2: AdamState::BETA2,
            eps: AdamState::EPS,
            init_seed: 0,
            optimize_labels: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("N_AT must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.target_epoch < 1 {
            return Err(Error::InvalidConfig("target epoch is 1-based".into()));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::InvalidConfig(
                "Adam needs betas in [0, 1) and a positive epsilon".into(),
            ));
        }
        Ok(())
    }
}

/// Labels of the dummy batch: fixed classes, or logits whose softmax is optimized.
#[derive(Clone, Debug, PartialEq)]
pub enum DummyLabels {
    Known(Vec<usize>),
    Logits(Array),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DummyData {
    /// `[N, c, h, w]`.
    pub x_hat: Array,
    pub labels: DummyLabels,
}

impl DummyData {
    /// Pixels i.i.d. uniform on `[0, 1]`; optimized labels start uniform.
    pub fn random(
        shape: &[usize],
        known_labels: &[usize],
        classes: usize,
        optimize_labels: bool,
        seed: u64,
    ) -> Self {
        let mut rng = rng::rng_from(seed);
        let n = shape.iter().product();
        let x_hat = Array::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen::<f64>()).collect());
        let labels = if optimize_labels {
            DummyLabels::Logits(Array::zeros(&[shape[0], classes]))
        } else {
            DummyLabels::Known(known_labels.to_vec())
        };
        Self { x_hat, labels }
    }

    pub fn optimize_labels(&self) -> bool {
        matches!(self.labels, DummyLabels::Logits(_))
    }

    /// `Ŷ` as rows of class probabilities.
    pub fn label_distribution(&self, classes: usize) -> Result<Array> {
        match &self.labels {
            DummyLabels::Known(y) => model::one_hot(y, classes),
            DummyLabels::Logits(z) => {
                Ok(nn::softmax(&Tensor::constant(z.clone()))?.value().clone())
            }
        }
    }
}

/// What the attacker replays: the starting parameters, the update to match
/// and the (possibly reduced) training procedure.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackProblem {
    pub arch: Architecture,
    pub theta_start: ModelParams,
    pub target: ModelUpdate,
    pub replay: TrainingConfig,
    /// Known labels in the order the client processed its samples.
    pub known_labels: Vec<usize>,
    /// Per-epoch sample orders of a full-batch multi-epoch round; see
    /// [`full_batch_epoch_orders`].
    pub epoch_orders: Vec<Vec<usize>>,
}

impl AttackProblem {
    /// Builds the problem for one observed round. For multi-epoch,
    /// multi-batch rounds the target becomes the interpolated update of
    /// `target_epoch` replayed from the interpolated parameters before it.
    pub fn from_round(
        record: &RoundRecord,
        known_labels: Vec<usize>,
        target_epoch: usize,
    ) -> Result<Self> {
        let cfg = record.config;
        if known_labels.len() != record.dataset_size {
            return Err(Error::InvalidConfig(format!(
                "{} known labels for a client with N={}",
                known_labels.len(),
                record.dataset_size
            )));
        }
        if let Some(&bad) = known_labels.iter().find(|&&y| y >= record.arch.classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: record.arch.classes,
            });
        }
        let epoch_orders = if scenario_of(&cfg) == Scenario::S2 {
            full_batch_epoch_orders(&cfg, record.round)
        } else {
            Vec::new()
        };
        let (theta_start, target, replay) = if scenario_of(&cfg) == Scenario::S4 {
            if target_epoch < 1 || target_epoch > cfg.epochs {
                return Err(Error::InvalidConfig(format!(
                    "target epoch {target_epoch} outside 1..={}",
                    cfg.epochs
                )));
            }
            let approx = approximate_updates(&record.theta_start, &record.theta_end, cfg.epochs)?;
            let start = interpolated_params(
                &record.theta_start,
                &record.theta_end,
                cfg.epochs,
                target_epoch - 1,
            )?;
            let target = approx.epoch(target_epoch).expect("epoch in range").clone();
            (start, target, TrainingConfig { epochs: 1, ..cfg })
        } else {
            (
                record.theta_start.clone(),
                record.theta_end.sub(&record.theta_start)?,
                cfg,
            )
        };
        Ok(Self {
            arch: record.arch,
            theta_start,
            target,
            replay,
            known_labels,
            epoch_orders,
        })
    }

    /// `G(x_hat, y_hat)` for this problem.
    pub fn replay_update(&self, x_hat: &Tensor, y_hat: &Tensor) -> Result<TensorUpdate> {
        replicate_update_ordered(
            &self.arch,
            &self.theta_start,
            &self.replay,
            x_hat,
            y_hat,
            &self.epoch_orders,
        )
    }

    pub fn batch_shape(&self) -> Vec<usize> {
        let i = self.arch.input;
        vec![self.replay.dataset_size(), i.channels, i.height, i.width]
    }

    /// `‖G(X̂, Ŷ) − target‖²` without recording a graph.
    pub fn distance(&self, dummy: &DummyData) -> Result<f64> {
        let x = Tensor::constant(dummy.x_hat.clone());
        let y = Tensor::constant(dummy.label_distribution(self.arch.classes)?);
        let dh = self.replay_update(&x, &y)?;
        Ok(update_values(&self.target, &dh)
            .sub(&self.target)?
            .squared_norm())
    }
}

/// One row of the per-trial trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss_q: f64,
    pub loss_m: f64,
    /// FNV-1a of the layer weights used in this iteration.
    pub q_hash: String,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub dummy: DummyData,
    /// `Ŷ` as class probabilities.
    pub y_hat: Array,
    /// `f(Q)`; `+∞` after divergence.
    pub f_value: f64,
    pub diverged: bool,
    pub trace: Vec<TraceRow>,
}

fn weights_hash(weights: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in weights {
        for b in w.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Runs the attack from dummy data drawn with `atk.init_seed`.
pub fn rec_attack(
    q: &WeightVectorQ,
    problem: &AttackProblem,
    atk: &AttackConfig,
) -> Result<AttackOutcome> {
    let init = DummyData::random(
        &problem.batch_shape(),
        &problem.known_labels,
        problem.arch.classes,
        atk.optimize_labels,
        atk.init_seed,
    );
    rec_attack_from(q, problem, atk, init)
}

/// Runs the attack from the given starting dummy data.
pub fn rec_attack_from(
    q: &WeightVectorQ,
    problem: &AttackProblem,
    atk: &AttackConfig,
    init: DummyData,
) -> Result<AttackOutcome> {
    atk.validate()?;
    if init.x_hat.shape() != problem.batch_shape().as_slice() {
        return Err(Error::InvalidConfig(format!(
            "dummy batch {:?} does not match {:?}",
            init.x_hat.shape(),
            problem.batch_shape()
        )));
    }
    let classes = problem.arch.classes;
    let base = weight_schedule(q, &layer_partition(&problem.arch));
    let known = match &init.labels {
        DummyLabels::Known(y) => Some(Tensor::constant(model::one_hot(y, classes)?)),
        DummyLabels::Logits(_) => None,
    };
    let mut dummy = init;
    let mut x_state = AdamState::with_hyper(dummy.x_hat.len(), atk.beta1, atk.beta2, atk.eps);
    let mut y_state = match &dummy.labels {
        DummyLabels::Logits(z) => Some(AdamState::with_hyper(
            z.len(),
            atk.beta1,
            atk.beta2,
            atk.eps,
        )),
        DummyLabels::Known(_) => None,
    };
    let mut trace = Vec::with_capacity(atk.iterations);
    let start = Instant::now();
    let mut diverged = false;

    for iteration in 0..atk.iterations {
        let tape = Tape::new();
        let x = tape.leaf(dummy.x_hat.clone());
        let mut wrt = vec![x.clone()];
        let y = match (&known, &dummy.labels) {
            (Some(y), _) => y.clone(),
            (None, DummyLabels::Logits(z)) => {
                let z = tape.leaf(z.clone());
                wrt.push(z.clone());
                nn::softmax(&z)?
            }
            (None, DummyLabels::Known(_)) => unreachable!("known labels are pre-encoded"),
        };
        let dh = problem.replay_update(&x, &y)?;
        let loss_m_value = update_values(&problem.target, &dh)
            .sub(&problem.target)?
            .squared_norm();
        let (loss, weights) = match atk.loss_kind {
            LossKind::Unweighted => (
                matching_loss_unweighted(&dh, &problem.target)?,
                vec![1.0; base.len()],
            ),
            LossKind::Weighted => {
                let wl = weighted_loss_from_base(&dh, &problem.target, q, &base)?;
                (wl.loss, wl.weights)
            }
        };
        let loss_value = loss.item();
        trace.push(TraceRow {
            iteration,
            loss_q: loss_value,
            loss_m: loss_m_value,
            q_hash: weights_hash(&weights),
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        if !loss_value.is_finite() {
            diverged = true;
            break;
        }
        let g = grad(&loss, &wrt, false)?.into_vec();
        if g.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
            diverged = true;
            break;
        }
        adam_step(&mut x_state, dummy.x_hat.data_mut(), g[0].data(), atk.lr);
        if let (Some(state), DummyLabels::Logits(z)) = (y_state.as_mut(), &mut dummy.labels) {
            adam_step(state, z.data_mut(), g[1].data(), atk.lr);
        }
        if iteration % 100 == 0 {
            log::debug!(
                "attack iteration {iteration}: loss {loss_value:.6e}, l_m {loss_m_value:.6e}"
            );
        }
    }

    let f_value = if diverged {
        f64::INFINITY
    } else {
        problem.distance(&dummy)?
    };
    let diverged = diverged || !f_value.is_finite();
    let f_value = if diverged { f64::INFINITY } else { f_value };
    let y_hat = dummy.label_distribution(classes)?;
    Ok(AttackOutcome {
        dummy,
        y_hat,
        f_value,
        diverged,
        trace,
    })
}

/// Writes the trace as CSV with a header row.
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "iteration,loss_q,loss_m,q_hash,elapsed_s")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{},{:.6}",
            r.iteration, r.loss_q, r.loss_m, r.q_hash, r.elapsed_s
        )?;
    }
    out.flush()?;
    Ok(())
}
