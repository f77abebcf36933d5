//! Drives external trainer processes through the line-delimited JSON protocol.

mod protocol;
mod study;
mod trial;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hpo::{HpoError, TrialConfig};
use crate::ingest::ParameterId;

pub use protocol::{Command, ConfigMessage, Event, StopReason};
pub use study::{
    best_cell_table, read_ledger, run_study, select_best_per_cell, CellBest, LedgerEntry, StudyOptions, StudyResult,
    TrialStatus,
};
pub use trial::{run_trial, EpochEvent, StoppedReason, TrialOutcome};

#[derive(Debug, Error)]
pub enum OrchestrateError {
    #[error("cannot launch trainer `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("protocol violation at trainer line {line_no}: {detail}: {line}")]
    ProtocolViolation { line_no: usize, line: String, detail: String },
    #[error("all {budget} trials failed")]
    AllTrialsFailed { budget: usize },
    #[error("ledger {path}: {detail}")]
    Ledger { path: PathBuf, detail: String },
    #[error("invalid trainer spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Hpo(#[from] HpoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "VGG16")]
    Vgg16,
    ResNet50,
    MobileNetV2,
    DenseNet121,
    #[serde(rename = "ViT")]
    Vit,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Vgg16,
        Architecture::ResNet50,
        Architecture::MobileNetV2,
        Architecture::DenseNet121,
        Architecture::Vit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Vgg16 => "VGG16",
            Architecture::ResNet50 => "ResNet50",
            Architecture::MobileNetV2 => "MobileNetV2",
            Architecture::DenseNet121 => "DenseNet121",
            Architecture::Vit => "ViT",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = OrchestrateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| OrchestrateError::InvalidSpec(format!("unknown architecture {s:?}")))
    }
}

pub const DEFAULT_MAX_EPOCHS: u32 = 50;
pub const DEFAULT_EPOCH_TIMEOUT: Duration = Duration::from_secs(30 * 60);

/// How to launch a trainer. Arguments may contain the placeholders
/// `{trial_id}`, `{seed}`, `{parameter}` and `{architecture}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerSpec {
    pub command: Vec<String>,
    pub working_dir: Option<PathBuf>,
    pub architecture: Architecture,
    pub parameter: ParameterId,
    pub max_epochs: u32,
    pub epoch_timeout: Duration,
    pub batch_size: Option<u32>,
    pub horizontal_flip: bool,
}

impl TrainerSpec {
    pub fn new(command: Vec<String>, architecture: Architecture, parameter: ParameterId) -> Result<Self, OrchestrateError> {
        if command.is_empty() || command[0].is_empty() {
            return Err(OrchestrateError::InvalidSpec("empty trainer command".into()));
        }
        Ok(Self {
            command,
            working_dir: None,
            architecture,
            parameter,
            max_epochs: DEFAULT_MAX_EPOCHS,
            epoch_timeout: DEFAULT_EPOCH_TIMEOUT,
            batch_size: None,
            horizontal_flip: true,
        })
    }

    pub fn command_for(&self, config: &TrialConfig) -> Vec<String> {
        self.command
            .iter()
            .map(|a| {
                a.replace("{trial_id}", &config.trial_id.to_string())
                    .replace("{seed}", &config.seed.to_string())
                    .replace("{parameter}", &self.parameter.column())
                    .replace("{architecture}", self.architecture.as_str())
            })
            .collect()
    }
}
