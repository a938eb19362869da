//! Gradient-inversion attack on a client's returned update.

mod adam;
mod approx;
mod rec;
mod replicate;
mod weights;

pub use adam::{adam_step, AdamState};
pub use approx::{approximate_updates, interpolated_params, ApproxUpdates};
pub use rec::{
    rec_attack, rec_attack_from, write_trace_csv, AttackConfig, AttackOutcome, AttackProblem,
    DummyData, DummyLabels, LossKind, TraceRow,
};
pub use replicate::{
    full_batch_epoch_orders, matching_loss_unweighted, matching_loss_weighted, replicate_update,
    replicate_update_ordered, update_values, TensorUpdate, WeightedLoss,
};
pub use weights::{
    enhanced_weights, relative_errors, select_enhanced_layers, top_fraction, weight_schedule,
    LayerErrors, QBounds, WeightVectorQ, REL_ERR_DENOM_FLOOR,
};
