//! Line-delimited JSON messages exchanged with a trainer process.

use serde::{Deserialize, Serialize};

use crate::hpo::TrialConfig;
use crate::ingest::ParameterId;

use super::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMessage {
    #[serde(flatten)]
    pub trial: TrialConfig,
    pub parameter: ParameterId,
    pub architecture: Architecture,
    pub max_epochs: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u32>,
    pub horizontal_flip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    EpochCap,
    Failure,
}

/// Orchestrator to trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    Config(ConfigMessage),
    /// Learning rate for the epoch after `epoch`.
    SetLr { epoch: u32, lr: f64 },
    Stop { reason: StopReason },
}

/// Trainer to orchestrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Ready {
        trial_id: u64,
    },
    /// Losses are `null` when not finite.
    Epoch {
        epoch: u32,
        train_loss: Option<f64>,
        val_loss: Option<f64>,
        lr: f64,
        wall_seconds: f64,
    },
    Done {
        #[serde(default)]
        best_epoch: Option<u32>,
        #[serde(default)]
        checkpoint: Option<String>,
    },
}

impl Command {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("protocol messages serialize");
        s.push('\n');
        s
    }
}

impl Event {
    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("protocol messages serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::OptimizerKind;

    #[test]
    fn wire_shapes() {
        let stop = Command::Stop { reason: StopReason::EarlyStop };
        assert_eq!(stop.to_line(), "{\"type\":\"stop\",\"reason\":\"early_stop\"}\n");
        let set = Command::SetLr { epoch: 3, lr: 5e-4 };
        assert_eq!(set.to_line(), "{\"type\":\"set_lr\",\"epoch\":3,\"lr\":0.0005}\n");
        let ev = Event::parse(r#"{"type":"epoch","epoch":1,"train_loss":0.5,"val_loss":null,"lr":0.001,"wall_seconds":2.5}"#).unwrap();
        assert!(matches!(ev, Event::Epoch { val_loss: None, .. }));
        assert!(Event::parse(r#"{"type":"epoch","epoch":1}"#).is_err());
        assert!(matches!(Event::parse(r#"{"type":"done"}"#).unwrap(), Event::Done { best_epoch: None, .. }));
    }

    #[test]
    fn config_is_flat() {
        let cfg = ConfigMessage {
            trial: TrialConfig {
                trial_id: 4,
                seed: 9,
                dropout: 0.4,
                l2: 1e-3,
                learning_rate: 1e-4,
                dense_units: 512,
                optimizer: OptimizerKind::Adam,
            },
            parameter: "turbidity_fnu".parse().unwrap(),
            architecture: Architecture::ResNet50,
            max_epochs: 50,
            batch_size: None,
            horizontal_flip: true,
        };
        let line = Command::Config(cfg.clone()).to_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["type"], "config");
        assert_eq!(v["trial_id"], 4);
        assert_eq!(v["optimizer"], "adam");
        assert_eq!(v["architecture"], "ResNet50");
        assert_eq!(serde_json::from_str::<Command>(&line).unwrap(), Command::Config(cfg));
    }
}
