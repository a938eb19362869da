//! Differentiable replay of the client's local training on dummy data, and
//! the matching losses between replayed and observed updates.

use crate::autodiff::{grad, ops, Tape, Tensor};
use crate::error::{Error, Result};
use crate::fedsim::{epoch_permutation, scenario_of, Scenario, TrainingConfig};
use crate::model::{self, Architecture, LayerPartition, ModelParams, ModelUpdate, ParamSet};

use super::weights::{
    enhanced_weights, relative_errors, select_enhanced_layers, weight_schedule, WeightVectorQ,
};

/// A model update whose entries stay attached to the tape.
pub type TensorUpdate = Vec<Vec<Tensor>>;

/// `Δθ̂ = G(X̂, Ŷ)`: the client's procedure replayed on `x_hat` with target
/// distributions `y_hat` (`[N, classes]`).
///
/// Scenario 1 takes one full-batch step, Scenario 2 takes `E` of them and
/// Scenario 3 walks `B` contiguous slices of the dummy batch in order. When
/// `x_hat` or `y_hat` lives on a tape the inner gradients are recorded so the
/// result can be differentiated again.
pub fn replicate_update(
    arch: &Architecture,
    theta_t: &ModelParams,
    config: &TrainingConfig,
    x_hat: &Tensor,
    y_hat: &Tensor,
) -> Result<TensorUpdate> {
    replicate_update_ordered(arch, theta_t, config, x_hat, y_hat, &[])
}

/// Slot orders that make epoch `e > 0` of a full-batch round visit the
/// dummy samples in the client's order for that epoch, given that the
/// dummy slots follow the client's first-epoch order. Empty when the round
/// has a single epoch or several mini-batches.
pub fn full_batch_epoch_orders(config: &TrainingConfig, round: u64) -> Vec<Vec<usize>> {
    if config.epochs < 2 || config.batches != 1 {
        return Vec::new();
    }
    let n = config.dataset_size();
    let first = epoch_permutation(config.shuffle_seed, round, 0, n);
    let mut slot_of = vec![0; n];
    for (slot, &sample) in first.iter().enumerate() {
        slot_of[sample] = slot;
    }
    (0..config.epochs)
        .map(|e| {
            epoch_permutation(config.shuffle_seed, round, e, n)
                .iter()
                .map(|&s| slot_of[s])
                .collect()
        })
        .collect()
}

/// [`replicate_update`] where full-batch epoch `e` first reorders the dummy
/// rows by `orders[e]`. The reordering changes only the summation order, so
/// replaying the true batch reproduces the client's update bit for bit.
pub fn replicate_update_ordered(
    arch: &Architecture,
    theta_t: &ModelParams,
    config: &TrainingConfig,
    x_hat: &Tensor,
    y_hat: &Tensor,
    orders: &[Vec<usize>],
) -> Result<TensorUpdate> {
    config.validate()?;
    if scenario_of(config) == Scenario::S4 {
        return Err(Error::UnsupportedScenario(
            "the client's mini-batch order across epochs cannot be replayed; split the update with \
             approximate_updates and attack one epoch as a single-epoch, multi-batch round"
                .into(),
        ));
    }
    let n = x_hat.shape()[0];
    if n != config.dataset_size() {
        return Err(Error::InvalidConfig(format!(
            "dummy batch has {n} samples, the round trained on N={}",
            config.dataset_size()
        )));
    }
    if y_hat.shape() != [n, arch.classes] {
        return Err(Error::InvalidConfig(format!(
            "dummy labels have shape {:?}, expected [{n}, {}]",
            y_hat.shape(),
            arch.classes
        )));
    }
    let create_graph = x_hat.requires_grad() || y_hat.requires_grad();
    let tape = x_hat
        .tape()
        .or(y_hat.tape())
        .cloned()
        .unwrap_or_else(Tape::new);
    let theta = theta_t.to_tensors(Some(&tape));

    // Same arithmetic as the client, step by step, so replaying the true
    // batch reproduces the observed update bit for bit.
    let m = config.batch_size;
    let mut current = theta.clone();
    if !orders.is_empty() && (orders.len() != config.epochs || config.batches != 1) {
        return Err(Error::InvalidConfig(format!(
            "{} epoch orders for a round with E={} and B={}",
            orders.len(),
            config.epochs,
            config.batches
        )));
    }
    for e in 0..config.epochs {
        let (x_e, y_e) = match orders.get(e) {
            Some(order) => (
                ops::permute_rows(x_hat, order)?,
                ops::permute_rows(y_hat, order)?,
            ),
            None => (x_hat.clone(), y_hat.clone()),
        };
        for b in 0..config.batches {
            let xb = ops::slice_rows(&x_e, b * m, (b + 1) * m)?;
            let yb = ops::slice_rows(&y_e, b * m, (b + 1) * m)?;
            let loss = model::forward_loss_soft(arch, &current, &xb, &yb)?;
            let flat: Vec<Tensor> = current.iter().flatten().cloned().collect();
            let mut g = grad(&loss, &flat, create_graph)?.into_vec().into_iter();
            let step: TensorUpdate = current
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|_| ops::scale(&g.next().unwrap(), config.lr))
                        .collect()
                })
                .collect();
            current = zip_layers(&current, &step, ops::sub)?;
        }
    }
    zip_layers(&current, &theta, ops::sub)
}

fn zip_layers(
    a: &TensorUpdate,
    b: &TensorUpdate,
    f: impl Fn(&Tensor, &Tensor) -> std::result::Result<Tensor, crate::autodiff::AutodiffError>,
) -> Result<TensorUpdate> {
    a.iter()
        .zip(b)
        .map(|(la, lb)| {
            la.iter()
                .zip(lb)
                .map(|(x, y)| f(x, y).map_err(Error::from))
                .collect()
        })
        .collect()
}

/// Snapshot of a tensor update's values.
pub fn update_values(template: &ModelUpdate, delta_hat: &TensorUpdate) -> ModelUpdate {
    ParamSet::from_tensors(template, delta_hat)
}

fn check_layout(delta_hat: &TensorUpdate, delta: &ModelUpdate) -> Result<()> {
    let ok = delta_hat.len() == delta.num_layers()
        && delta_hat.iter().zip(delta.layers()).all(|(h, d)| {
            h.len() == d.tensors.len()
                && h.iter()
                    .zip(&d.tensors)
                    .all(|(t, a)| t.shape() == a.shape())
        });
    if ok {
        Ok(())
    } else {
        Err(Error::ArchitectureMismatch(
            "replayed and observed updates have different layouts".into(),
        ))
    }
}

/// Per-layer `‖Δθ̂^(l) − Δθ^(l)‖²` as tape scalars.
fn layer_distances(delta_hat: &TensorUpdate, delta: &ModelUpdate) -> Result<Vec<Tensor>> {
    check_layout(delta_hat, delta)?;
    delta_hat
        .iter()
        .zip(delta.layers())
        .map(|(h, d)| {
            let mut total: Option<Tensor> = None;
            for (t, a) in h.iter().zip(&d.tensors) {
                let sq = ops::sum_of_squares(&ops::sub(t, &Tensor::constant(a.clone()))?);
                total = Some(match total {
                    None => sq,
                    Some(s) => ops::add(&s, &sq)?,
                });
            }
            Ok(total.unwrap_or_else(|| Tensor::scalar(0.0)))
        })
        .collect()
}

fn weighted_sum(terms: &[Tensor], weights: Option<&[f64]>) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (l, t) in terms.iter().enumerate() {
        let term = match weights {
            Some(w) => ops::scale(t, w[l]),
            None => t.clone(),
        };
        total = Some(match total {
            None => term,
            Some(s) => ops::add(&s, &term)?,
        });
    }
    Ok(total.unwrap_or_else(|| Tensor::scalar(0.0)))
}

/// `ℓ_m = ‖Δθ̂ − Δθ‖²` over every parameter.
pub fn matching_loss_unweighted(delta_hat: &TensorUpdate, delta: &ModelUpdate) -> Result<Tensor> {
    weighted_sum(&layer_distances(delta_hat, delta)?, None)
}

/// `ℓ_Q` together with the weights and enhanced layers it used.
#[derive(Clone, Debug)]
pub struct WeightedLoss {
    pub loss: Tensor,
    pub weights: Vec<f64>,
    pub enhanced: Vec<usize>,
}

/// `ℓ_Q = Σ_l q^(l) ‖Δθ̂^(l) − Δθ^(l)‖²` with the enhanced set chosen from the
/// current `delta_hat`. The weights are plain numbers, not tape values.
pub fn matching_loss_weighted(
    delta_hat: &TensorUpdate,
    delta: &ModelUpdate,
    q: &WeightVectorQ,
    partition: &LayerPartition,
) -> Result<WeightedLoss> {
    weighted_loss_from_base(delta_hat, delta, q, &weight_schedule(q, partition))
}

pub(crate) fn weighted_loss_from_base(
    delta_hat: &TensorUpdate,
    delta: &ModelUpdate,
    q: &WeightVectorQ,
    base: &[f64],
) -> Result<WeightedLoss> {
    let terms = layer_distances(delta_hat, delta)?;
    if base.len() != terms.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "{} layer weights for {} layers",
            base.len(),
            terms.len()
        )));
    }
    let errors = relative_errors(&update_values(delta, delta_hat), delta)?;
    let enhanced = select_enhanced_layers(&errors, q.p_mean, q.p_var);
    let weights = enhanced_weights(base, &enhanced, q.q_en);
    let loss = weighted_sum(&terms, Some(&weights))?;
    Ok(WeightedLoss {
        loss,
        weights,
        enhanced,
    })
}
