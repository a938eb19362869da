//! Experiment configuration: one TOML file with a section per subsystem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, LossKind, QBounds, WeightVectorQ};
use crate::bayesopt::BoConfig;
use crate::error::{Error, Result};
use crate::fedsim::TrainingConfig;
use crate::model::{ArchKind, Architecture, InputShape};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: ArchKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            arch: ArchKind::CnnSmall,
            channels: 3,
            height: 8,
            width: 8,
            classes: 10,
        }
    }
}

/// Local training of the attacked client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Dataset size `N`; must equal `batches * batch_size`.
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "E")]
    pub epochs: usize,
    #[serde(rename = "B")]
    pub batches: usize,
    #[serde(rename = "M")]
    pub batch_size: usize,
    pub eta: f64,
    /// FedAvg rounds run before the attacked one.
    pub warmup_rounds: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            n: 4,
            epochs: 1,
            batches: 1,
            batch_size: 4,
            eta: 0.001,
            warmup_rounds: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    /// `N_AT`.
    pub iterations: usize,
    /// `η̂`.
    pub lr: f64,
    pub loss: LossKind,
    pub target_epoch: usize,
    pub optimize_labels: bool,
    /// Fixed `Q` for `attack` runs with the weighted loss.
    pub q: Option<[f64; 6]>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let d = AttackConfig::default();
        Self {
            iterations: d.iterations,
            lr: d.lr,
            loss: LossKind::Unweighted,
            target_epoch: 1,
            optimize_labels: false,
            q: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoSection {
    /// `N_BO`.
    pub budget: usize,
    /// Random initial trials `n`.
    pub initial: usize,
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl Default for BoSection {
    fn default() -> Self {
        let d = BoConfig::default();
        Self {
            budget: d.n_bo,
            initial: d.n_init,
            lower: d.bounds.lower,
            upper: d.bounds.upper,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
#[derive(Default)]
pub enum DatasetSource {
    /// Seeded smooth images built from Gaussian blobs.
    #[default]
    Synthetic,
    /// PPM/PGM files, taken in lexicographic order.
    Directory {
        path: PathBuf,
        labels: Option<Vec<usize>>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub attack: AttackSection,
    pub bo: BoSection,
    pub dataset: DatasetSource,
}

/// The four evaluated client settings, all with `N = 4`.
pub fn case_preset(case: u8) -> Result<(usize, usize)> {
    match case {
        1 => Ok((1, 1)),
        2 => Ok((4, 1)),
        3 => Ok((1, 4)),
        4 => Ok((2, 2)),
        other => Err(Error::InvalidConfig(format!(
            "case must be 1..=4, got {other}"
        ))),
    }
}

impl ExperimentConfig {
    /// Parses and validates a config file. Relative dataset paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let DatasetSource::Directory { path: dir, .. } = &mut cfg.dataset {
            if dir.is_relative() {
                *dir = path.parent().unwrap_or(Path::new(".")).join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    /// Sets `E`, `B` and `M` for one of the four cases, keeping `N = 4`.
    pub fn apply_case(&mut self, case: u8) -> Result<()> {
        let (e, b) = case_preset(case)?;
        self.training.n = 4;
        self.training.epochs = e;
        self.training.batches = b;
        self.training.batch_size = 4 / b;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        if t.n != t.batches * t.batch_size {
            return Err(Error::InvalidConfig(format!(
                "N={} must equal B·M = {}·{}",
                t.n, t.batches, t.batch_size
            )));
        }
        self.training_config()?;
        self.architecture()?;
        self.attack_config(LossKind::Unweighted)?.validate()?;
        if self.attack.target_epoch > t.epochs {
            return Err(Error::InvalidConfig(format!(
                "target epoch {} exceeds E={}",
                self.attack.target_epoch, t.epochs
            )));
        }
        if let Some(q) = self.attack.q {
            WeightVectorQ::from_array(q).validated(&self.bounds())?;
        }
        self.bounds().validate()?;
        let bo = &self.bo;
        if bo.initial < 2 || bo.budget <= bo.initial {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= n < N_BO, got n={} and N_BO={}",
                bo.initial, bo.budget
            )));
        }
        if let DatasetSource::Directory { path, labels } = &self.dataset {
            if !path.is_dir() {
                return Err(Error::InvalidConfig(format!(
                    "image directory {} does not exist",
                    path.display()
                )));
            }
            if let Some(l) = labels {
                if l.len() != t.n {
                    return Err(Error::InvalidConfig(format!(
                        "{} labels given for N={}",
                        l.len(),
                        t.n
                    )));
                }
                if let Some(&bad) = l.iter().find(|&&y| y >= self.model.classes) {
                    return Err(Error::LabelOutOfRange {
                        label: bad,
                        classes: self.model.classes,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> InputShape {
        InputShape::new(self.model.channels, self.model.height, self.model.width)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.model.arch, self.input_shape(), self.model.classes)
    }

    pub fn training_config(&self) -> Result<TrainingConfig> {
        let t = &self.training;
        TrainingConfig::new(
            t.epochs,
            t.batches,
            t.eta,
            t.batch_size,
            rng::stream_seed(self.seed, rng::SHUFFLE),
        )
    }

    pub fn attack_config(&self, loss_kind: LossKind) -> Result<AttackConfig> {
        let a = &self.attack;
        let cfg = AttackConfig {
            iterations: a.iterations,
            lr: a.lr,
            loss_kind,
            target_epoch: a.target_epoch,
            optimize_labels: a.optimize_labels,
            init_seed: rng::stream_seed(self.seed, rng::DUMMY_INIT),
            ..AttackConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bounds(&self) -> QBounds {
        QBounds {
            lower: self.bo.lower,
            upper: self.bo.upper,
        }
    }

    pub fn bo_config(&self) -> BoConfig {
        BoConfig {
            n_bo: self.bo.budget,
            n_init: self.bo.initial,
            bounds: self.bounds(),
            seed: rng::stream_seed(self.seed, rng::BO),
        }
    }

    pub fn model_seed(&self) -> u64 {
        rng::stream_seed(self.seed, rng::MODEL_INIT)
    }

    pub fn dataset_seed(&self) -> u64 {
        rng::stream_seed(self.seed, rng::DATASET)
    }
}
