use serde::{Deserialize, Serialize};

use super::{MetricsError, PredictionSet};
use crate::numeric::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bin {
    Low,
    Medium,
    High,
}

impl Bin {
    pub const ALL: [Bin; 3] = [Bin::Low, Bin::Medium, Bin::High];

    pub fn label(self) -> &'static str {
        match self {
            Bin::Low => "Low",
            Bin::Medium => "Medium",
            Bin::High => "High",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// 33rd and 66th percentile cut points of the actual values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinCuts {
    pub q33: f64,
    pub q66: f64,
}

impl BinCuts {
    /// Low ≤ q33 < Medium ≤ q66 < High.
    pub fn bin(&self, v: f64) -> Bin {
        if v <= self.q33 {
            Bin::Low
        } else if v <= self.q66 {
            Bin::Medium
        } else {
            Bin::High
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.q33 == self.q66
    }
}

pub fn quantile_bins(actuals: &[f64]) -> Result<BinCuts, MetricsError> {
    if actuals.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = actuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&sorted, p).expect("nonempty, p in range");
    Ok(BinCuts { q33: q(0.33), q66: q(0.66) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedReport {
    pub cuts: BinCuts,
    /// `confusion[actual][predicted]` over Low, Medium, High.
    pub confusion: [[u64; 3]; 3],
    /// Fewer than three values or coinciding cut points; Medium is then empty.
    pub degenerate: bool,
}

impl BinnedReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn count(&self, actual: Bin, predicted: Bin) -> u64 {
        self.confusion[actual.index()][predicted.index()]
    }
}

/// Bin actual and predicted values with the same cuts, derived from the actuals.
pub fn binned_confusion(p: &PredictionSet, cuts: BinCuts) -> BinnedReport {
    let mut confusion = [[0u64; 3]; 3];
    for (a, y) in p.actual().iter().zip(p.predicted()) {
        confusion[cuts.bin(*a).index()][cuts.bin(*y).index()] += 1;
    }
    BinnedReport {
        cuts,
        confusion,
        degenerate: p.len() < 3 || cuts.is_degenerate(),
    }
}
