//! Helpers for driving the scripted mock trainer.

use std::path::{Path, PathBuf};
use std::time::Duration;

use hydrocurate_core::ingest::ParameterId;
use hydrocurate_core::orchestrate::{Architecture, TrainerSpec};
use serde_json::Value;

pub fn write_script(dir: &Path, name: &str, script: Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, script.to_string()).unwrap();
    p
}

pub fn mock_spec(script: &Path, arch: Architecture, parameter: ParameterId, max_epochs: u32) -> TrainerSpec {
    let mut spec = TrainerSpec::new(
        vec![env!("CARGO_BIN_EXE_mock_trainer").to_string(), script.display().to_string()],
        arch,
        parameter,
    )
    .unwrap();
    spec.max_epochs = max_epochs;
    spec.epoch_timeout = Duration::from_secs(20);
    spec
}

pub fn turbidity() -> ParameterId {
    "turbidity_fnu".parse().unwrap()
}

/// Independent copy of the mock's known objective over raw config values.
pub fn bowl_oracle(dropout: f64, l2: f64, lr: f64, units: u32, adam: bool) -> f64 {
    0.05 + (dropout - 0.35).powi(2) / 0.04
        + (l2.log10() + 2.5).powi(2) / 4.0
        + (lr.log10() + 4.2).powi(2) / 4.0
        + if units == 1024 { 0.0 } else { 0.1 }
        + if adam { 0.0 } else { 0.2 }
}

/// Values of the 10 x 10 x 25 x 2 x 2 = 10,000-point grid over the default space.
pub fn bowl_grid() -> Vec<f64> {
    let lin = |i: usize, n: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(10_000);
    for a in 0..10 {
        for b in 0..10 {
            for c in 0..25 {
                for units in [512, 1024] {
                    for adam in [true, false] {
                        out.push(bowl_oracle(
                            lin(a, 10, 0.3, 0.5),
                            10f64.powf(lin(b, 10, -4.0, -2.0)),
                            10f64.powf(lin(c, 25, -5.0, -3.0)),
                            units,
                            adam,
                        ));
                    }
                }
            }
        }
    }
    out
}
