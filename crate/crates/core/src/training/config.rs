use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, Objective};

/// Named learning-rate defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 1e-3, for small encoders trained from scratch.
    #[default]
    Desk,
    /// 2e-5, the rate used for fine-tuning a pre-trained encoder.
    Paper,
}

impl Preset {
    pub fn learning_rate(self) -> f64 {
        match self {
            Preset::Desk => 1e-3,
            Preset::Paper => 2e-5,
        }
    }
}

/// How the learning rate changes across epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Epoch `e` of `E` (0-based) trains at `lr * (E - e) / E`.
    Linear,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => epochs.saturating_sub(epoch) as f64 / epochs.max(1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub preset: Preset,
    /// Overrides the preset's rate when set.
    pub learning_rate: Option<f64>,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Minimum training-split frequency for a token to get its own id.
    pub min_freq: usize,
    /// Train on `L_p + lambda_ns * MAE(Z, silver)` instead of the regularized objective.
    pub supervision: bool,
    /// Keep the parameters of the epoch with the best dev micro-F1 rather
    /// than the last epoch.
    pub select_best: bool,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            learning_rate: None,
            schedule: LrSchedule::Constant,
            batch_size: 16,
            epochs: 10,
            seed: 1,
            min_freq: 1,
            supervision: false,
            select_best: true,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            log_path: None,
            checkpoint_path: None,
        }
    }
}

impl TrainConfig {
    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.preset.learning_rate())
    }

    pub fn objective(&self) -> Objective {
        if self.supervision {
            Objective::Supervised
        } else {
            Objective::Regularized
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("train.learning_rate must be positive, got {lr}")));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::Config("train.adam: betas must lie in [0, 1) and epsilon must be positive".into()));
        }
        self.loss.validate()
    }
}
