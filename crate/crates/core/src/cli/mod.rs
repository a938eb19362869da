//! Experiment harness behind the `awa` binary.

mod commands;
mod config;
mod images;

pub use commands::*;
pub use config::{
    case_preset, AttackSection, BoSection, DatasetSource, ExperimentConfig, ModelSection,
    TrainingSection,
};
pub use images::{make_dataset, read_netpbm, write_netpbm, BLOBS_PER_CHANNEL};
