//! Scripted trainer speaking the orchestrator protocol.
//!
//! Usage: `mock_trainer <script.json>`. Script fields (all optional):
//!
//! * `curve`: validation losses per epoch; the last value repeats.
//! * `bowl`: when true, losses come from a known function of the config.
//! * `crash_at`: exit with status 3 right after sending this epoch.
//! * `crash_trials`: trial ids that crash (at `crash_at`, default 2).
//! * `garbage_at`: emit a malformed line instead of this epoch.
//! * `hang_at`: stop responding before this epoch.
//! * `nan_at`: report a non-finite validation loss at this epoch.
//! * `wrong_lr`: report a learning rate other than the instructed one.

use std::io::{self, BufRead, Write};
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct Script {
    curve: Vec<f64>,
    bowl: bool,
    crash_at: Option<u32>,
    crash_trials: Vec<u64>,
    garbage_at: Option<u32>,
    hang_at: Option<u32>,
    nan_at: Option<u32>,
    wrong_lr: bool,
}

/// Known objective of the config; minimum 0.05 at dropout 0.35, l2 10^-2.5,
/// lr 10^-4.2 with 1024 units and Adam.
fn bowl(cfg: &Value) -> f64 {
    let f = |k: &str| cfg[k].as_f64().unwrap_or(f64::NAN);
    let units = if cfg["dense_units"].as_u64() == Some(1024) { 0.0 } else { 0.1 };
    let opt = if cfg["optimizer"] == "adam" { 0.0 } else { 0.2 };
    0.05 + (f("dropout") - 0.35).powi(2) / 0.04
        + (f("l2").log10() + 2.5).powi(2) / 4.0
        + (f("learning_rate").log10() + 4.2).powi(2) / 4.0
        + units
        + opt
}

fn send(out: &mut impl Write, v: Value) {
    writeln!(out, "{v}").and_then(|_| out.flush()).expect("stdout");
}

fn main() {
    let path = std::env::args().nth(1).expect("script path argument");
    let script: Script = serde_json::from_str(&std::fs::read_to_string(&path).expect("script file")).expect("script json");
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let mut out = io::stdout().lock();
    let cfg: Value = serde_json::from_str(&lines.next().expect("config line").expect("stdin")).expect("config json");
    assert_eq!(cfg["type"], "config");
    let trial_id = cfg["trial_id"].as_u64().expect("trial_id");
    send(&mut out, json!({"type": "ready", "trial_id": trial_id}));
    let mut lr = cfg["learning_rate"].as_f64().expect("learning_rate");
    let crash_at = if script.crash_trials.contains(&trial_id) {
        Some(script.crash_at.unwrap_or(2))
    } else if script.crash_trials.is_empty() {
        script.crash_at
    } else {
        None
    };
    let mut best = (f64::INFINITY, 0);
    for epoch in 1u32.. {
        if script.hang_at == Some(epoch) {
            std::thread::sleep(Duration::from_secs(3600));
        }
        if script.garbage_at == Some(epoch) {
            writeln!(out, "epoch {epoch} loss ???").expect("stdout");
            out.flush().expect("stdout");
        }
        let val = if script.bowl {
            bowl(&cfg) * (1.0 + 1.0 / f64::from(epoch))
        } else {
            let i = (epoch as usize - 1).min(script.curve.len().saturating_sub(1));
            script.curve.get(i).copied().unwrap_or(1.0)
        };
        if val < best.0 {
            best = (val, epoch);
        }
        let val_json = if script.nan_at == Some(epoch) { Value::Null } else { json!(val) };
        let reported_lr = if script.wrong_lr { lr * 2.0 } else { lr };
        send(
            &mut out,
            json!({"type": "epoch", "epoch": epoch, "train_loss": val * 1.1, "val_loss": val_json, "lr": reported_lr, "wall_seconds": 0.0}),
        );
        if crash_at == Some(epoch) {
            eprintln!("mock trainer crashing at epoch {epoch}");
            std::process::exit(3);
        }
        let Some(Ok(reply)) = lines.next() else {
            return;
        };
        let reply: Value = serde_json::from_str(&reply).expect("reply json");
        match reply["type"].as_str() {
            Some("set_lr") => lr = reply["lr"].as_f64().expect("lr"),
            Some("stop") => {
                let ckpt = format!("mock/trial-{trial_id}/epoch-{}.ckpt", best.1);
                send(&mut out, json!({"type": "done", "best_epoch": best.1, "checkpoint": ckpt}));
                return;
            }
            other => panic!("unexpected reply {other:?}"),
        }
    }
}
