//! Training-control policies as pure functions over a validation-loss history.

use serde::{Deserialize, Serialize};

use super::HpoError;

/// What counts as an improvement over the best loss so far.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum MinDelta {
    /// `loss < best - delta`
    Absolute(f64),
    /// `loss < best * (1 - delta)`
    Relative(f64),
}

impl Default for MinDelta {
    fn default() -> Self {
        MinDelta::Absolute(0.0)
    }
}

impl MinDelta {
    pub const RELATIVE_DEFAULT: MinDelta = MinDelta::Relative(1e-4);

    pub fn improves(self, loss: f64, best: f64) -> bool {
        match self {
            MinDelta::Absolute(d) => loss < best - d,
            MinDelta::Relative(r) => loss < best * (1.0 - r),
        }
    }

    fn validate(self) -> Result<(), HpoError> {
        let v = match self {
            MinDelta::Absolute(d) | MinDelta::Relative(d) => d,
        };
        if v.is_finite() && v >= 0.0 {
            Ok(())
        } else {
            Err(HpoError::InvalidPolicy(format!("min_delta must be >= 0, got {v}")))
        }
    }
}

/// Epochs since the last improvement, replayed from the start of `history`.
/// `reset_at` is the stagnation count that triggers an action and clears the counter.
fn stagnation(history: &[f64], min_delta: MinDelta, reset_at: Option<usize>) -> (usize, bool) {
    let mut best = f64::INFINITY;
    let mut wait = 0;
    let mut fired_last = false;
    for &loss in history {
        fired_last = false;
        if min_delta.improves(loss, best) {
            best = loss;
            wait = 0;
        } else {
            wait += 1;
            if reset_at.is_some_and(|p| wait >= p) {
                wait = 0;
                fired_last = true;
            }
        }
    }
    (wait, fired_last)
}

/// True iff the best loss has not improved by more than `min_delta` during
/// the last `patience` epochs.
pub fn early_stop_decision(history: &[f64], patience: usize, min_delta: MinDelta) -> bool {
    let (wait, _) = stagnation(history, min_delta, None);
    wait >= patience.max(1)
}

/// Learning rate after the last epoch of `history`: reduced by `factor`
/// (floored at `min_lr`) when the stagnation counter reaches `patience` at
/// that epoch, otherwise unchanged. Each reduction restarts the count.
pub fn plateau_lr(
    history: &[f64],
    current_lr: f64,
    patience: usize,
    factor: f64,
    min_lr: f64,
    min_delta: MinDelta,
) -> f64 {
    let (_, fired) = stagnation(history, min_delta, Some(patience.max(1)));
    if fired && current_lr > min_lr {
        (current_lr * factor).max(min_lr)
    } else {
        current_lr
    }
}

/// `initial_lr * 0.5 * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: u64, total_steps: u64, initial_lr: f64) -> Result<f64, HpoError> {
    if total_steps == 0 || step > total_steps {
        return Err(HpoError::StepOutOfRange { step, total_steps });
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(initial_lr * 0.5 * (1.0 + phase.cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulePolicy {
    EarlyStop {
        patience: usize,
        #[serde(default)]
        min_delta: MinDelta,
    },
    ReduceOnPlateau {
        patience: usize,
        factor: f64,
        min_lr: f64,
        #[serde(default)]
        min_delta: MinDelta,
    },
    /// `total_steps` counts epochs.
    CosineDecay { initial_lr: f64, total_steps: u64 },
}

impl SchedulePolicy {
    pub fn early_stop(patience: usize) -> Self {
        SchedulePolicy::EarlyStop {
            patience,
            min_delta: MinDelta::default(),
        }
    }

    pub fn plateau(patience: usize, factor: f64, min_lr: f64) -> Self {
        SchedulePolicy::ReduceOnPlateau {
            patience,
            factor,
            min_lr,
            min_delta: MinDelta::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        let bad = |m: String| Err(HpoError::InvalidPolicy(m));
        match *self {
            SchedulePolicy::EarlyStop { patience, min_delta } => {
                if patience < 1 {
                    return bad("early-stop patience must be >= 1".into());
                }
                min_delta.validate()
            }
            SchedulePolicy::ReduceOnPlateau {
                patience,
                factor,
                min_lr,
                min_delta,
            } => {
                if patience < 1 {
                    return bad("plateau patience must be >= 1".into());
                }
                if !(factor > 0.0 && factor < 1.0) {
                    return bad(format!("plateau factor must be in (0, 1), got {factor}"));
                }
                if !(min_lr.is_finite() && min_lr >= 0.0) {
                    return bad(format!("min_lr must be >= 0, got {min_lr}"));
                }
                min_delta.validate()
            }
            SchedulePolicy::CosineDecay {
                initial_lr,
                total_steps,
            } => {
                if total_steps < 1 {
                    return bad("cosine total_steps must be >= 1".into());
                }
                if !(initial_lr.is_finite() && initial_lr > 0.0) {
                    return bad(format!("cosine initial_lr must be > 0, got {initial_lr}"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSource {
    Plateau,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrAdjustment {
    pub epoch: u32,
    pub source: LrSource,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochDecision {
    pub stop: bool,
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub adjustments: Vec<LrAdjustment>,
}

/// Applies a policy list epoch by epoch. With both plateau and cosine active
/// the rate is `max(cosine(epoch) * plateau_scale, min_lr)`.
#[derive(Debug, Clone)]
pub struct ScheduleDriver {
    policies: Vec<SchedulePolicy>,
    base_lr: f64,
    lr: f64,
    plateau_scale: f64,
    history: Vec<f64>,
}

impl ScheduleDriver {
    pub fn new(policies: &[SchedulePolicy], initial_lr: f64) -> Result<Self, HpoError> {
        for p in policies {
            p.validate()?;
        }
        let base_lr = policies
            .iter()
            .find_map(|p| match p {
                SchedulePolicy::CosineDecay { initial_lr, .. } => Some(*initial_lr),
                _ => None,
            })
            .unwrap_or(initial_lr);
        Ok(Self {
            policies: policies.to_vec(),
            base_lr,
            lr: base_lr,
            plateau_scale: 1.0,
            history: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    fn cosine(&self) -> Option<(f64, u64)> {
        self.policies.iter().find_map(|p| match p {
            SchedulePolicy::CosineDecay {
                initial_lr,
                total_steps,
            } => Some((*initial_lr, *total_steps)),
            _ => None,
        })
    }

    /// Records the validation loss of `epoch` (1-based) and decides the next step.
    pub fn on_epoch(&mut self, epoch: u32, val_loss: f64) -> EpochDecision {
        self.history.push(val_loss);
        let mut stop = false;
        let mut adjustments = Vec::new();
        let mut floor = 0.0f64;
        let cosine = self.cosine();
        let mut lr = self.lr;
        for policy in &self.policies {
            match *policy {
                SchedulePolicy::EarlyStop { patience, min_delta } => {
                    stop |= early_stop_decision(&self.history, patience, min_delta);
                }
                SchedulePolicy::ReduceOnPlateau {
                    patience,
                    factor,
                    min_lr,
                    min_delta,
                } => {
                    floor = floor.max(min_lr);
                    if cosine.is_some() {
                        let scaled = plateau_lr(&self.history, self.plateau_scale, patience, factor, 0.0, min_delta);
                        if scaled < self.plateau_scale {
                            self.plateau_scale = scaled;
                            let to = (self.base_lr * scaled).max(min_lr).min(lr);
                            adjustments.push(LrAdjustment {
                                epoch,
                                source: LrSource::Plateau,
                                from: lr,
                                to,
                            });
                            lr = to;
                        }
                    } else {
                        let to = plateau_lr(&self.history, lr, patience, factor, min_lr, min_delta);
                        if to != lr {
                            adjustments.push(LrAdjustment {
                                epoch,
                                source: LrSource::Plateau,
                                from: lr,
                                to,
                            });
                            lr = to;
                        }
                    }
                }
                SchedulePolicy::CosineDecay { .. } => {}
            }
        }
        if let Some((initial, total)) = cosine {
            let step = u64::from(epoch).min(total);
            let c = cosine_lr(step, total, initial).expect("step clamped to total");
            let to = (c * self.plateau_scale).max(floor).min(lr);
            if to != lr {
                adjustments.push(LrAdjustment {
                    epoch,
                    source: LrSource::Cosine,
                    from: lr,
                    to,
                });
                lr = to;
            }
        }
        self.lr = lr;
        EpochDecision { stop, lr, adjustments }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const NONE: MinDelta = MinDelta::Absolute(0.0);

    #[test]
    fn early_stop_counts_from_best_epoch() {
        let six = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9];
        assert!(!early_stop_decision(&six, 5, NONE));
        let seven = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
        assert!(early_stop_decision(&seven, 5, NONE));
        assert!(!early_stop_decision(&[1.0, 1.0, 1.0], 5, NONE));
        let decreasing: Vec<f64> = (0..100).map(|i| 10.0 - i as f64 * 0.05).collect();
        assert!(!early_stop_decision(&decreasing, 5, NONE));
    }

    #[test]
    fn min_delta_modes() {
        let h = [1.0, 0.95, 0.94];
        assert!(!early_stop_decision(&h, 2, MinDelta::Absolute(0.0)));
        assert!(early_stop_decision(&h, 2, MinDelta::Absolute(0.1)));
        assert!(!early_stop_decision(&h, 2, MinDelta::Relative(0.01)));
        assert!(early_stop_decision(&h, 2, MinDelta::Relative(0.1)));
    }

    #[test]
    fn plateau_reduces_once_per_patience_window() {
        assert_eq!(plateau_lr(&[1.0, 0.9, 0.8], 1e-3, 2, 0.5, 0.0, NONE), 1e-3);
        assert_eq!(plateau_lr(&[1.0, 1.0, 1.0], 1e-3, 2, 0.5, 0.0, NONE), 5e-4);
        // counter restarts after a reduction
        assert_eq!(plateau_lr(&[1.0, 1.0, 1.0, 1.0], 5e-4, 2, 0.5, 0.0, NONE), 5e-4);
        assert_eq!(plateau_lr(&[1.0, 1.0, 1.0, 1.0, 1.0], 5e-4, 2, 0.5, 0.0, NONE), 2.5e-4);
        assert_eq!(plateau_lr(&[1.0, 1.0, 1.0], 1e-6, 2, 0.5, 1e-6, NONE), 1e-6);
        assert_eq!(plateau_lr(&[1.0, 1.0, 1.0], 1.5e-6, 2, 0.5, 1e-6, NONE), 1e-6);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 1e-3).unwrap(), 1e-3);
        assert_eq!(cosine_lr(10, 10, 1e-3).unwrap(), 0.0);
        assert_eq!(cosine_lr(5, 10, 1e-3).unwrap(), 5e-4);
        assert!(matches!(cosine_lr(11, 10, 1e-3), Err(HpoError::StepOutOfRange { .. })));
        assert!(cosine_lr(0, 0, 1e-3).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(SchedulePolicy::early_stop(0).validate().is_err());
        assert!(SchedulePolicy::plateau(2, 1.0, 0.0).validate().is_err());
        assert!(SchedulePolicy::plateau(2, 0.5, -1.0).validate().is_err());
        assert!(SchedulePolicy::CosineDecay { initial_lr: 1e-3, total_steps: 0 }.validate().is_err());
        assert!(SchedulePolicy::plateau(2, 0.5, 0.0).validate().is_ok());
    }

    #[test]
    fn driver_composes_plateau_and_cosine() {
        let policies = [
            SchedulePolicy::plateau(1, 0.5, 1e-6),
            SchedulePolicy::CosineDecay { initial_lr: 1e-3, total_steps: 4 },
        ];
        let mut d = ScheduleDriver::new(&policies, 1e-3).unwrap();
        let e1 = d.on_epoch(1, 1.0);
        assert_eq!(e1.adjustments.len(), 1);
        assert_eq!(e1.adjustments[0].source, LrSource::Cosine);
        let e2 = d.on_epoch(2, 1.0);
        assert_eq!(e2.adjustments[0].source, LrSource::Plateau);
        assert_eq!(e2.lr, 1e-3 * 0.5 * 0.5);
        let e4 = {
            d.on_epoch(3, 0.5);
            d.on_epoch(4, 0.4)
        };
        assert_eq!(e4.lr, 1e-6);
    }

    proptest! {
        #[test]
        fn cosine_is_nonincreasing(total in 1u64..500, lr in 1e-6f64..1.0) {
            let mut prev = f64::INFINITY;
            for s in 0..=total {
                let v = cosine_lr(s, total, lr).unwrap();
                prop_assert!(v <= prev);
                prev = v;
            }
        }

        #[test]
        fn early_stop_is_monotone(h in proptest::collection::vec(0.0f64..2.0, 1..30), p in 1usize..6, extra in 1usize..10) {
            if early_stop_decision(&h, p, NONE) {
                let best = h.iter().copied().fold(f64::INFINITY, f64::min);
                let mut longer = h.clone();
                longer.extend(std::iter::repeat_n(best, extra));
                prop_assert!(early_stop_decision(&longer, p, NONE));
            }
        }

        #[test]
        fn driver_never_raises_lr_or_undercuts_floor(h in proptest::collection::vec(0.0f64..2.0, 1..40), p in 1usize..4) {
            let mut d = ScheduleDriver::new(&[SchedulePolicy::plateau(p, 0.5, 1e-5)], 1e-3).unwrap();
            let mut prev = d.lr();
            for (i, v) in h.iter().enumerate() {
                let lr = d.on_epoch(i as u32 + 1, *v).lr;
                prop_assert!(lr <= prev && lr >= 1e-5);
                prev = lr;
            }
        }
    }
}
