//! Regression evaluation: error metrics, correlation and agreement,
//! quantile-binned confusion matrices and comparison tables.

mod binning;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ParameterId;
use crate::numeric::pairwise_sum;
use crate::Score;

pub use binning::{binned_confusion, quantile_bins, Bin, BinCuts, BinnedReport};
pub use table::{metric_table, read_predictions_csv, PredictionRow, METRIC_COLUMNS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no prediction pairs")]
    EmptyInput,
    #[error("non-finite value in pair {0}")]
    NonFinite(usize),
    #[error("actual values have zero variance")]
    ZeroVariance,
    #[error("{0}")]
    Input(String),
}

/// Actual/predicted pairs for one parameter and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    actual: Vec<f64>,
    predicted: Vec<f64>,
    pub parameter: Option<ParameterId>,
    pub model_tag: String,
}

impl PredictionSet {
    pub fn new(
        pairs: impl IntoIterator<Item = (f64, f64)>,
        parameter: Option<ParameterId>,
        model_tag: impl Into<String>,
    ) -> Result<Self, MetricsError> {
        let (actual, predicted): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if actual.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        if let Some(i) = (0..actual.len()).find(|&i| !actual[i].is_finite() || !predicted[i].is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        Ok(Self {
            actual,
            predicted,
            parameter,
            model_tag: model_tag.into(),
        })
    }

    pub fn from_slices(actual: &[f64], predicted: &[f64]) -> Result<Self, MetricsError> {
        if actual.len() != predicted.len() {
            return Err(MetricsError::Input(format!(
                "{} actual values vs {} predictions",
                actual.len(),
                predicted.len()
            )));
        }
        Self::new(actual.iter().copied().zip(predicted.iter().copied()), None, "")
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    pub fn actual(&self) -> &[f64] {
        &self.actual
    }

    pub fn predicted(&self) -> &[f64] {
        &self.predicted
    }
}

/// Normalisation of second moments in the correlation family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n − 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    pub r2: Score,
    /// Percent, in `[0, 200]`.
    pub smape: f64,
    pub pearson_r: Score,
    pub ccc: Score,
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    /// Centered sums of squares and cross products.
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Moments {
    let n = x.len() as f64;
    let mean_x = pairwise_sum(x) / n;
    let mean_y = pairwise_sum(y) / n;
    let dx: Vec<f64> = x.iter().map(|v| v - mean_x).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - mean_y).collect();
    let sq = |d: &[f64]| pairwise_sum(&d.iter().map(|v| v * v).collect::<Vec<_>>());
    let cross: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| a * b).collect();
    Moments {
        mean_x,
        mean_y,
        sxx: sq(&dx),
        syy: sq(&dy),
        sxy: pairwise_sum(&cross),
    }
}

/// Pearson correlation; undefined when either series is constant or n < 2.
pub fn pearson(x: &[f64], y: &[f64]) -> Score {
    if x.len() < 2 || x.len() != y.len() {
        return Score::Undefined;
    }
    let m = moments(x, y);
    if m.sxx == 0.0 || m.syy == 0.0 {
        return Score::Undefined;
    }
    Score::Defined((m.sxy / (m.sxx * m.syy).sqrt()).clamp(-1.0, 1.0))
}

/// Concordance correlation; undefined only when its denominator vanishes
/// (both series constant and equal) or n < 2.
pub fn ccc(x: &[f64], y: &[f64], mode: MomentMode) -> Score {
    if x.len() < 2 || x.len() != y.len() {
        return Score::Undefined;
    }
    let m = moments(x, y);
    let d = match mode {
        MomentMode::Population => x.len() as f64,
        MomentMode::Sample => (x.len() - 1) as f64,
    };
    let bias = m.mean_x - m.mean_y;
    let denom = m.sxx / d + m.syy / d + bias * bias;
    Score::ratio(2.0 * m.sxy / d, denom).value().map(|v| v.clamp(-1.0, 1.0)).into()
}

/// Symmetric absolute percentage error, `0/0` terms contributing 0.
pub fn smape(actual: &[f64], predicted: &[f64]) -> f64 {
    let terms: Vec<f64> = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| {
            let denom = y.abs() + p.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (p - y).abs() / denom
            }
        })
        .collect();
    100.0 * pairwise_sum(&terms) / actual.len() as f64
}

pub fn regression_report(p: &PredictionSet) -> RegressionReport {
    regression_report_with(p, MomentMode::Population)
}

pub fn regression_report_with(p: &PredictionSet, mode: MomentMode) -> RegressionReport {
    let (y, yhat) = (p.actual(), p.predicted());
    let n = y.len() as f64;
    let sq: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (b - a) * (b - a)).collect();
    let abs: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (b - a).abs()).collect();
    let ss_res = pairwise_sum(&sq);
    let mse = ss_res / n;
    let m = moments(y, yhat);
    RegressionReport {
        n: y.len(),
        mse,
        mae: pairwise_sum(&abs) / n,
        rmse: mse.sqrt(),
        r2: if m.sxx == 0.0 {
            Score::Undefined
        } else {
            Score::Defined(1.0 - ss_res / m.sxx)
        },
        smape: smape(y, yhat),
        pearson_r: pearson(y, yhat),
        ccc: ccc(y, yhat, mode),
    }
}

/// R² relative to always predicting the mean of the actuals.
///
/// Negative values mean the residual sum of squares exceeds the total sum
/// of squares.
pub fn r2_against_mean_baseline(p: &PredictionSet) -> Result<f64, MetricsError> {
    regression_report(p).r2.value().ok_or(MetricsError::ZeroVariance)
}
