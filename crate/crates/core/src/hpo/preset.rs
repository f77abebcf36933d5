use serde::{Deserialize, Serialize};

use super::{OptimizerKind, SchedulePolicy, TrialConfig};

/// Fixed-hyperparameter values of a preset that bypasses the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedHyperparameters {
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub dense_units: u32,
    pub optimizer: OptimizerKind,
}

impl FixedHyperparameters {
    pub fn into_trial(self, trial_id: u64, seed: u64) -> TrialConfig {
        TrialConfig {
            trial_id,
            seed,
            dropout: self.dropout,
            l2: self.l2,
            learning_rate: self.learning_rate,
            dense_units: self.dense_units,
            optimizer: self.optimizer,
        }
    }
}

/// Named training profile: policies, epoch cap and optional fixed hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPreset {
    pub name: String,
    /// `None` means hyperparameters come from the Bayesian search.
    pub fixed: Option<FixedHyperparameters>,
    pub batch_size: Option<u32>,
    pub horizontal_flip: bool,
    pub max_epochs: u32,
    pub policies: Vec<SchedulePolicy>,
}

pub const DEFAULT_MIN_LR: f64 = 1e-7;

impl TrainingPreset {
    /// Bayesian search, early stopping after 5 stagnant epochs, plateau
    /// patience 2, at most 50 epochs.
    pub fn standard() -> Self {
        Self {
            name: "standard".into(),
            fixed: None,
            batch_size: None,
            horizontal_flip: true,
            max_epochs: 50,
            policies: vec![
                SchedulePolicy::early_stop(5),
                SchedulePolicy::plateau(2, 0.5, DEFAULT_MIN_LR),
            ],
        }
    }

    /// Fixed hyperparameters, batch size 8, plateau patience 1 and cosine decay.
    pub fn turbidity(max_epochs: u32) -> Self {
        let fixed = FixedHyperparameters {
            dropout: 0.3,
            l2: 1e-4,
            learning_rate: 1e-4,
            dense_units: 512,
            optimizer: OptimizerKind::Adam,
        };
        Self {
            name: "turbidity".into(),
            fixed: Some(fixed),
            batch_size: Some(8),
            horizontal_flip: false,
            max_epochs,
            policies: vec![
                SchedulePolicy::early_stop(5),
                SchedulePolicy::plateau(1, 0.5, DEFAULT_MIN_LR),
                SchedulePolicy::CosineDecay {
                    initial_lr: fixed.learning_rate,
                    total_steps: u64::from(max_epochs),
                },
            ],
        }
    }

    pub fn turbidity_cnn() -> Self {
        Self::turbidity(50)
    }

    pub fn turbidity_vit() -> Self {
        Self::turbidity(300)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "standard" => Some(Self::standard()),
            "turbidity" | "turbidity-cnn" => Some(Self::turbidity_cnn()),
            "turbidity-vit" => Some(Self::turbidity_vit()),
            _ => None,
        }
    }
}
