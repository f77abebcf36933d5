//! Bayesian hyperparameter search and training schedule policies.

mod bo;
pub mod gp;
mod preset;
mod schedule;
mod space;

use thiserror::Error;

pub use bo::{expected_improvement, observe, suggest, Observation, SurrogateState, CANDIDATES, INITIAL_DESIGN};
pub use preset::{FixedHyperparameters, TrainingPreset, DEFAULT_MIN_LR};
pub use schedule::{
    cosine_lr, early_stop_decision, plateau_lr, EpochDecision, LrAdjustment, LrSource, MinDelta, ScheduleDriver,
    SchedulePolicy,
};
pub use space::{OptimizerKind, Range, SearchSpace, TrialConfig, CONTINUOUS_DIMS};

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("trial id {0} was already observed")]
    DuplicateTrialId(u64),
    #[error("step {step} outside [0, {total_steps}]")]
    StepOutOfRange { step: u64, total_steps: u64 },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid schedule policy: {0}")]
    InvalidPolicy(String),
}
