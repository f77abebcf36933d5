use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::hpo::{
    observe, suggest, FixedHyperparameters, LrAdjustment, SchedulePolicy, SearchSpace, SurrogateState, TrialConfig,
};
use crate::ingest::ParameterId;
use crate::Score;

use super::trial::{run_trial, EpochEvent, StoppedReason, TrialOutcome};
use super::{Architecture, OrchestrateError, TrainerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One JSONL ledger line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub trial_id: u64,
    pub parameter: ParameterId,
    pub architecture: Architecture,
    pub config: TrialConfig,
    /// Best validation loss; `null` for failed trials.
    pub objective: Option<f64>,
    pub status: TrialStatus,
    pub epochs: u32,
    pub best_epoch: Option<u32>,
    pub stopped_reason: StoppedReason,
    pub checkpoint: Option<String>,
    pub detail: Option<String>,
    pub lr_adjustments: Vec<LrAdjustment>,
    pub telemetry: Vec<EpochEvent>,
}

impl LedgerEntry {
    fn from_outcome(spec: &TrainerSpec, o: TrialOutcome) -> Self {
        let ok = o.succeeded();
        Self {
            trial_id: o.config.trial_id,
            parameter: spec.parameter,
            architecture: spec.architecture,
            config: o.config,
            objective: if ok { o.best_val_loss } else { None },
            status: if ok { TrialStatus::Ok } else { TrialStatus::Failed },
            epochs: o.telemetry.len() as u32,
            best_epoch: o.best_epoch,
            stopped_reason: o.stopped_reason,
            checkpoint: o.checkpoint,
            detail: o.failure,
            lr_adjustments: o.lr_adjustments,
            telemetry: o.telemetry,
        }
    }

    fn violation(spec: &TrainerSpec, config: TrialConfig, err: &OrchestrateError) -> Self {
        Self {
            trial_id: config.trial_id,
            parameter: spec.parameter,
            architecture: spec.architecture,
            config,
            objective: None,
            status: TrialStatus::Failed,
            epochs: 0,
            best_epoch: None,
            stopped_reason: StoppedReason::TrainerFailure,
            checkpoint: None,
            detail: Some(err.to_string()),
            lr_adjustments: Vec::new(),
            telemetry: Vec::new(),
        }
    }

    fn objective_or_nan(&self) -> f64 {
        self.objective.unwrap_or(f64::NAN)
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("ledger entries serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub budget: usize,
    pub seed: u64,
    pub policies: Vec<SchedulePolicy>,
    /// Bypasses the search with the same hyperparameters for every trial.
    pub fixed: Option<FixedHyperparameters>,
    /// Append-only JSONL ledger; existing entries are replayed.
    pub ledger: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub entries: Vec<LedgerEntry>,
    pub incumbent: LedgerEntry,
    /// Entries taken from an existing ledger.
    pub resumed: usize,
}

fn ledger_error(path: &Path, detail: impl Into<String>) -> OrchestrateError {
    OrchestrateError::Ledger {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads a ledger. A final line cut short by an interruption is ignored.
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerEntry>, OrchestrateError> {
    let text = std::fs::read_to_string(path).map_err(|e| ledger_error(path, e.to_string()))?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LedgerEntry>(line) {
            Ok(e) => out.push(e),
            Err(_) if i + 1 == lines.len() && !complete => {
                info!("{}: ignoring truncated final line", path.display());
            }
            Err(e) => return Err(ledger_error(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

fn next_config(state: &SurrogateState, opts: &StudyOptions) -> TrialConfig {
    match opts.fixed {
        Some(f) => {
            let id = state.trial_count() as u64;
            f.into_trial(id, opts.seed.wrapping_add(id))
        }
        None => suggest(state, opts.seed),
    }
}

/// Rewrites the ledger with exactly `entries`, dropping any truncated tail.
fn rewrite(path: &Path, entries: &[LedgerEntry]) -> Result<File, OrchestrateError> {
    let mut f = File::create(path).map_err(|e| ledger_error(path, e.to_string()))?;
    for e in entries {
        f.write_all(e.to_line().as_bytes())
            .map_err(|e| ledger_error(path, e.to_string()))?;
    }
    f.flush().map_err(|e| ledger_error(path, e.to_string()))?;
    Ok(f)
}

/// suggest -> run_trial -> observe for `budget` trials. Failed trials count
/// against the budget; the incumbent is the best successful trial.
pub fn run_study(spec: &TrainerSpec, space: &SearchSpace, opts: &StudyOptions) -> Result<StudyResult, OrchestrateError> {
    if opts.budget == 0 {
        return Err(OrchestrateError::InvalidSpec("study budget must be >= 1".into()));
    }
    let mut state = SurrogateState::new(space.clone())?;
    let mut entries = Vec::new();
    let mut file = None;
    if let Some(path) = &opts.ledger {
        if path.exists() {
            entries = read_ledger(path)?;
        }
        if entries.len() > opts.budget {
            return Err(ledger_error(path, format!("holds {} trials, budget is {}", entries.len(), opts.budget)));
        }
        for e in &entries {
            let expected = next_config(&state, opts);
            if expected != e.config || e.parameter != spec.parameter || e.architecture != spec.architecture {
                return Err(ledger_error(
                    path,
                    format!("trial {} does not match this study's seed, space or cell", e.trial_id),
                ));
            }
            state = observe(&state, e.config, e.objective_or_nan())?;
        }
        file = Some(rewrite(path, &entries)?);
    }
    let resumed = entries.len();
    if resumed > 0 {
        info!("resuming study after {resumed} recorded trials");
    }
    while entries.len() < opts.budget {
        let config = next_config(&state, opts);
        let entry = match run_trial(spec, &config, &opts.policies) {
            Ok(o) => LedgerEntry::from_outcome(spec, o),
            Err(e @ OrchestrateError::ProtocolViolation { .. }) => LedgerEntry::violation(spec, config, &e),
            Err(e) => return Err(e),
        };
        info!(
            "trial {}: {:?} objective {}",
            entry.trial_id,
            entry.status,
            Score::from(entry.objective).render(6)
        );
        if let (Some(f), Some(path)) = (file.as_mut(), &opts.ledger) {
            f.write_all(entry.to_line().as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| ledger_error(path, e.to_string()))?;
        }
        state = observe(&state, entry.config, entry.objective_or_nan())?;
        entries.push(entry);
    }
    let incumbent = entries
        .iter()
        .filter(|e| e.status == TrialStatus::Ok && e.objective.is_some())
        .fold(None::<&LedgerEntry>, |best, e| match best {
            Some(b) if b.objective_or_nan() <= e.objective_or_nan() => Some(b),
            _ => Some(e),
        })
        .cloned()
        .ok_or(OrchestrateError::AllTrialsFailed { budget: opts.budget })?;
    Ok(StudyResult {
        entries,
        incumbent,
        resumed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellBest {
    pub parameter: ParameterId,
    pub architecture: Architecture,
    /// `None` when no trial of the cell succeeded.
    pub best: Option<LedgerEntry>,
}

/// Best successful trial per (parameter, architecture) cell, in cell order.
pub fn select_best_per_cell(ledgers: &[Vec<LedgerEntry>]) -> Vec<CellBest> {
    let mut cells: BTreeMap<(ParameterId, Architecture), Option<LedgerEntry>> = BTreeMap::new();
    for e in ledgers.iter().flatten() {
        let slot = cells.entry((e.parameter, e.architecture)).or_default();
        let Some(obj) = e.objective.filter(|_| e.status == TrialStatus::Ok) else {
            continue;
        };
        if slot.as_ref().is_none_or(|b| obj < b.objective_or_nan()) {
            *slot = Some(e.clone());
        }
    }
    cells
        .into_iter()
        .map(|((parameter, architecture), best)| CellBest {
            parameter,
            architecture,
            best,
        })
        .collect()
}

/// Markdown table: one row per architecture, one column per parameter,
/// cells holding the best validation loss (`NaN` when none succeeded).
pub fn best_cell_table(cells: &[CellBest], decimals: usize) -> String {
    let mut params: Vec<ParameterId> = cells.iter().map(|c| c.parameter).collect();
    params.sort();
    params.dedup();
    let mut archs: Vec<Architecture> = cells.iter().map(|c| c.architecture).collect();
    archs.sort();
    archs.dedup();
    let mut out = String::from("| Model |");
    for p in &params {
        out.push_str(&format!(" {p} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(params.len()));
    out.push('\n');
    for a in &archs {
        out.push_str(&format!("| {a} |"));
        for p in &params {
            let score = cells
                .iter()
                .find(|c| c.parameter == *p && c.architecture == *a)
                .and_then(|c| c.best.as_ref())
                .map_or(Score::Undefined, |b| Score::from(b.objective));
            let cell = match cells.iter().any(|c| c.parameter == *p && c.architecture == *a) {
                true => score.render(decimals),
                false => "-".to_string(),
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}
