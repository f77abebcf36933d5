use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command as Process, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::hpo::{LrAdjustment, ScheduleDriver, SchedulePolicy, TrialConfig};

use super::protocol::{Command, ConfigMessage, Event, StopReason};
use super::{OrchestrateError, TrainerSpec};

const STDERR_TAIL: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub current_lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppedReason {
    EarlyStop,
    EpochCap,
    TrainerFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub config: TrialConfig,
    /// Minimum validation loss over the telemetry.
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<u32>,
    pub stopped_reason: StoppedReason,
    pub telemetry: Vec<EpochEvent>,
    pub lr_adjustments: Vec<LrAdjustment>,
    /// Checkpoint path reported by the trainer.
    pub checkpoint: Option<String>,
    pub failure: Option<String>,
}

impl TrialOutcome {
    fn new(config: TrialConfig, telemetry: Vec<EpochEvent>, stopped_reason: StoppedReason) -> Self {
        let mut best: Option<(f64, u32)> = None;
        for e in &telemetry {
            if best.is_none_or(|(v, _)| e.val_loss < v) {
                best = Some((e.val_loss, e.epoch));
            }
        }
        Self {
            config,
            best_val_loss: best.map(|b| b.0),
            best_epoch: best.map(|b| b.1),
            stopped_reason,
            telemetry,
            lr_adjustments: Vec::new(),
            checkpoint: None,
            failure: None,
        }
    }

    pub fn succeeded(&self) -> bool {
        self.stopped_reason != StoppedReason::TrainerFailure
    }

    /// Objective for the optimizer; NaN for failed trials.
    pub fn objective(&self) -> f64 {
        match (self.succeeded(), self.best_val_loss) {
            (true, Some(v)) => v,
            _ => f64::NAN,
        }
    }
}

enum Line {
    Text(String),
    Eof,
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<Line>,
    stderr: thread::JoinHandle<String>,
    line_no: usize,
    timeout: Duration,
}

enum Next {
    Event(Event),
    Eof,
    Timeout,
}

impl Session {
    fn spawn(spec: &TrainerSpec, config: &TrialConfig) -> Result<Self, OrchestrateError> {
        let argv = spec.command_for(config);
        let mut cmd = Process::new(&argv[0]);
        cmd.args(&argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(dir) = &spec.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|source| OrchestrateError::Spawn {
            command: argv.join(" "),
            source,
        })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(Line::Text(l)).is_err() {
                            return;
                        }
                    }
                    Err(_) => break,
                }
            }
            let _ = tx.send(Line::Eof);
        });
        let stderr = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            let start = buf.len().saturating_sub(STDERR_TAIL);
            String::from_utf8_lossy(&buf[start..]).into_owned()
        });
        Ok(Self {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            stderr,
            line_no: 0,
            timeout: spec.epoch_timeout,
        })
    }

    /// A failed write closes the input; the exit is then observed as end of output.
    fn send(&mut self, cmd: &Command) {
        debug!("-> {}", cmd.to_line().trim_end());
        let Some(stdin) = self.stdin.as_mut() else {
            return;
        };
        if stdin.write_all(cmd.to_line().as_bytes()).and_then(|_| stdin.flush()).is_err() {
            self.stdin = None;
        }
    }

    fn next(&mut self) -> Result<Next, OrchestrateError> {
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(Line::Text(l)) => l,
                Ok(Line::Eof) | Err(RecvTimeoutError::Disconnected) => return Ok(Next::Eof),
                Err(RecvTimeoutError::Timeout) => return Ok(Next::Timeout),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            debug!("<- {line}");
            return Event::parse(&line).map(Next::Event).map_err(|e| OrchestrateError::ProtocolViolation {
                line_no: self.line_no,
                line: line.clone(),
                detail: e.to_string(),
            });
        }
    }

    fn violation(&self, line: &Event, detail: impl Into<String>) -> OrchestrateError {
        OrchestrateError::ProtocolViolation {
            line_no: self.line_no,
            line: serde_json::to_string(line).unwrap_or_default(),
            detail: detail.into(),
        }
    }

    /// Closes stdin and waits up to the timeout before killing.
    fn finish(mut self) -> (Option<ExitStatus>, String) {
        self.stdin.take();
        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match self.child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                _ => {
                    let _ = self.child.kill();
                    break self.child.wait().ok();
                }
            }
        };
        let tail = self.stderr.join().unwrap_or_default();
        (status, tail)
    }

    fn kill(mut self) -> String {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.stdin.take();
        self.stderr.join().unwrap_or_default()
    }
}

fn describe(status: Option<ExitStatus>, tail: &str) -> String {
    let status = status.map_or("unknown exit status".to_string(), |s| s.to_string());
    let tail = tail.trim();
    if tail.is_empty() {
        status
    } else {
        format!("{status}; stderr: {}", tail.lines().last().unwrap_or(""))
    }
}

/// Runs one trial of the external trainer under `policies`.
///
/// Crashes, hangs and non-finite losses yield a `TrainerFailure` outcome;
/// malformed or out-of-order messages are protocol errors.
pub fn run_trial(
    spec: &TrainerSpec,
    config: &TrialConfig,
    policies: &[SchedulePolicy],
) -> Result<TrialOutcome, OrchestrateError> {
    let mut driver = ScheduleDriver::new(policies, config.learning_rate)?;
    let mut session = Session::spawn(spec, config)?;
    let mut telemetry: Vec<EpochEvent> = Vec::new();
    let mut adjustments = Vec::new();
    let fail = |session: Session, telemetry: Vec<EpochEvent>, adjustments: Vec<LrAdjustment>, why: String, killed: bool| {
        let tail = if killed { session.kill() } else { String::new() };
        let detail = if tail.trim().is_empty() {
            why
        } else {
            format!("{why}; stderr: {}", tail.trim().lines().last().unwrap_or(""))
        };
        warn!("trial {}: {detail}", config.trial_id);
        let mut o = TrialOutcome::new(*config, telemetry, StoppedReason::TrainerFailure);
        o.lr_adjustments = adjustments;
        o.failure = Some(detail);
        Ok(o)
    };

    let hello = Command::Config(ConfigMessage {
        trial: *config,
        parameter: spec.parameter,
        architecture: spec.architecture,
        max_epochs: spec.max_epochs,
        batch_size: spec.batch_size,
        horizontal_flip: spec.horizontal_flip,
    });
    session.send(&hello);
    match session.next() {
        Ok(Next::Event(Event::Ready { trial_id })) if trial_id == config.trial_id => {}
        Ok(Next::Event(ev)) => {
            let e = session.violation(&ev, format!("expected ready for trial {}", config.trial_id));
            session.kill();
            return Err(e);
        }
        Ok(Next::Eof) => {
            let (status, tail) = session.finish();
            return fail_with_exit(config, telemetry, adjustments, "trainer exited before ready", status, &tail);
        }
        Ok(Next::Timeout) => {
            return fail(session, telemetry, adjustments, "no ready message before the timeout".into(), true);
        }
        Err(e) => {
            session.kill();
            return Err(e);
        }
    }

    let reason = loop {
        let ev = match session.next() {
            Ok(Next::Event(ev)) => ev,
            Ok(Next::Eof) => {
                let (status, tail) = session.finish();
                let why = format!("trainer exited after {} epochs", telemetry.len());
                return fail_with_exit(config, telemetry, adjustments, &why, status, &tail);
            }
            Ok(Next::Timeout) => {
                let why = format!("no epoch event within {:?}", session.timeout);
                return fail(session, telemetry, adjustments, why, true);
            }
            Err(e) => {
                session.kill();
                return Err(e);
            }
        };
        let Event::Epoch {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_seconds,
        } = ev
        else {
            let e = session.violation(&ev, "expected an epoch event");
            session.kill();
            return Err(e);
        };
        let expected = telemetry.len() as u32 + 1;
        if epoch != expected {
            let e = session.violation(&ev, format!("epoch {epoch} out of sequence, expected {expected}"));
            session.kill();
            return Err(e);
        }
        if lr != driver.lr() {
            let e = session.violation(&ev, format!("trainer used lr {lr}, last instructed {}", driver.lr()));
            session.kill();
            return Err(e);
        }
        let (Some(train_loss), Some(val_loss)) = (train_loss.filter(|v| v.is_finite()), val_loss.filter(|v| v.is_finite())) else {
            session.send(&Command::Stop {
                reason: StopReason::Failure,
            });
            let why = format!("non-finite loss at epoch {epoch}");
            return fail(session, telemetry, adjustments, why, true);
        };
        telemetry.push(EpochEvent {
            epoch,
            train_loss,
            val_loss,
            current_lr: lr,
            wall_seconds,
        });
        let decision = driver.on_epoch(epoch, val_loss);
        for a in &decision.adjustments {
            info!("trial {} epoch {epoch}: {:?} lr {} -> {}", config.trial_id, a.source, a.from, a.to);
        }
        adjustments.extend(decision.adjustments);
        let (reply, done) = if decision.stop {
            (Command::Stop { reason: StopReason::EarlyStop }, Some(StoppedReason::EarlyStop))
        } else if epoch >= spec.max_epochs {
            (Command::Stop { reason: StopReason::EpochCap }, Some(StoppedReason::EpochCap))
        } else {
            (Command::SetLr { epoch, lr: decision.lr }, None)
        };
        session.send(&reply);
        if let Some(r) = done {
            break r;
        }
    };

    let checkpoint = match session.next() {
        Ok(Next::Event(Event::Done { checkpoint, .. })) => checkpoint,
        Ok(Next::Event(ev)) => {
            let e = session.violation(&ev, "expected done after stop");
            session.kill();
            return Err(e);
        }
        Ok(Next::Eof) => {
            let (status, tail) = session.finish();
            return fail_with_exit(config, telemetry, adjustments, "trainer exited without done", status, &tail);
        }
        Ok(Next::Timeout) => {
            return fail(session, telemetry, adjustments, "no done message before the timeout".into(), true);
        }
        Err(e) => {
            session.kill();
            return Err(e);
        }
    };
    let (status, tail) = session.finish();
    if !status.is_some_and(|s| s.success()) {
        return fail_with_exit(config, telemetry, adjustments, "trainer exited abnormally after done", status, &tail);
    }
    let mut outcome = TrialOutcome::new(*config, telemetry, reason);
    outcome.lr_adjustments = adjustments;
    outcome.checkpoint = checkpoint;
    Ok(outcome)
}

fn fail_with_exit(
    config: &TrialConfig,
    telemetry: Vec<EpochEvent>,
    adjustments: Vec<LrAdjustment>,
    why: &str,
    status: Option<ExitStatus>,
    tail: &str,
) -> Result<TrialOutcome, OrchestrateError> {
    let detail = format!("{why} ({})", describe(status, tail));
    warn!("trial {}: {detail}", config.trial_id);
    let mut o = TrialOutcome::new(*config, telemetry, StoppedReason::TrainerFailure);
    o.lr_adjustments = adjustments;
    o.failure = Some(detail);
    Ok(o)
}
