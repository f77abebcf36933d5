use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HpoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "Adam",
            OptimizerKind::Sgd => "SGD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

/// Mixed search space: three continuous dimensions (two log-scaled) and
/// two categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub dense_units: Vec<u32>,
    pub optimizers: Vec<OptimizerKind>,
    pub dropout: Range,
    /// Log-uniform.
    pub l2: Range,
    /// Log-uniform.
    pub learning_rate: Range,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            dense_units: vec![512, 1024],
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            dropout: Range { min: 0.3, max: 0.5 },
            l2: Range { min: 1e-4, max: 1e-2 },
            learning_rate: Range { min: 1e-5, max: 1e-3 },
        }
    }
}

/// Number of continuous dimensions in the unit-cube encoding.
pub const CONTINUOUS_DIMS: usize = 3;

/// One hyperparameter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub trial_id: u64,
    pub seed: u64,
    pub dropout: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub dense_units: u32,
    pub optimizer: OptimizerKind,
}

impl SearchSpace {
    pub fn from_toml_str(s: &str) -> Result<Self, HpoError> {
        let space: Self = toml::from_str(s).map_err(|e| HpoError::InvalidSpace(e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    pub fn load(path: &Path) -> Result<Self, HpoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HpoError::InvalidSpace(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("search space serializes")
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        let check = |name: &str, r: Range, log: bool| {
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) || (log && r.min <= 0.0) {
                Err(HpoError::InvalidSpace(format!("{name} range [{}, {}] is invalid", r.min, r.max)))
            } else {
                Ok(())
            }
        };
        check("dropout", self.dropout, false)?;
        check("l2", self.l2, true)?;
        check("learning_rate", self.learning_rate, true)?;
        if self.dense_units.is_empty() || self.optimizers.is_empty() {
            return Err(HpoError::InvalidSpace("categorical dimensions need at least one choice".into()));
        }
        Ok(())
    }

    /// Width of the one-hot encoded vector.
    pub fn encoded_dims(&self) -> usize {
        CONTINUOUS_DIMS + self.dense_units.len() + self.optimizers.len()
    }

    pub fn contains(&self, c: &TrialConfig) -> bool {
        let inside = |r: Range, v: f64| v.is_finite() && r.min <= v && v <= r.max;
        inside(self.dropout, c.dropout)
            && inside(self.l2, c.l2)
            && inside(self.learning_rate, c.learning_rate)
            && self.dense_units.contains(&c.dense_units)
            && self.optimizers.contains(&c.optimizer)
    }

    /// Continuous coordinates mapped to `[0, 1]`, log dimensions in log space.
    pub fn to_unit(&self, c: &TrialConfig) -> [f64; CONTINUOUS_DIMS] {
        let lin = |r: Range, v: f64| (v - r.min) / (r.max - r.min);
        let log = |r: Range, v: f64| (v.log10() - r.min.log10()) / (r.max.log10() - r.min.log10());
        [
            lin(self.dropout, c.dropout),
            log(self.l2, c.l2),
            log(self.learning_rate, c.learning_rate),
        ]
    }

    /// Inverse of [`Self::to_unit`]; coordinates are clamped to the cube
    /// and results to the bounds.
    pub fn from_unit(&self, u: [f64; CONTINUOUS_DIMS], dense_idx: usize, opt_idx: usize) -> TrialConfig {
        let u = u.map(|v| v.clamp(0.0, 1.0));
        let lin = |r: Range, v: f64| (r.min + v * (r.max - r.min)).clamp(r.min, r.max);
        let log = |r: Range, v: f64| {
            let (lo, hi) = (r.min.log10(), r.max.log10());
            10f64.powf(lo + v * (hi - lo)).clamp(r.min, r.max)
        };
        TrialConfig {
            trial_id: 0,
            seed: 0,
            dropout: lin(self.dropout, u[0]),
            l2: log(self.l2, u[1]),
            learning_rate: log(self.learning_rate, u[2]),
            dense_units: self.dense_units[dense_idx],
            optimizer: self.optimizers[opt_idx],
        }
    }

    pub(crate) fn category_indices(&self, c: &TrialConfig) -> (usize, usize) {
        (
            self.dense_units.iter().position(|d| *d == c.dense_units).unwrap_or(0),
            self.optimizers.iter().position(|o| *o == c.optimizer).unwrap_or(0),
        )
    }

    pub(crate) fn encode_parts(&self, u: &[f64; CONTINUOUS_DIMS], dense_idx: usize, opt_idx: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.encoded_dims());
        x.extend_from_slice(u);
        x.extend((0..self.dense_units.len()).map(|i| f64::from(u8::from(i == dense_idx))));
        x.extend((0..self.optimizers.len()).map(|i| f64::from(u8::from(i == opt_idx))));
        x
    }

    pub fn encode(&self, c: &TrialConfig) -> Vec<f64> {
        let (d, o) = self.category_indices(c);
        self.encode_parts(&self.to_unit(c), d, o)
    }
}
