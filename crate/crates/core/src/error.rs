use crate::autodiff::AutodiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("unknown architecture `{0}` (expected mlp_small, cnn_small or linear)")]
    UnknownArchitecture(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    UnsupportedScenario(String),
    #[error("all {0} tuning trials diverged")]
    AllTrialsDiverged(usize),
    #[error("attack diverged; partial outputs are in {0}")]
    Diverged(String),
    #[error("surrogate model failed: {0}")]
    Surrogate(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
