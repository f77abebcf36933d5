use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{MetricsError, RegressionReport};
use crate::Score;

pub const METRIC_COLUMNS: [&str; 7] = ["MSE", "MAE", "RMSE", "R²", "sMAPE", "Pearson r", "CCC"];

/// Markdown comparison table, one row per model; undefined cells read `NaN`.
pub fn metric_table(title: &str, rows: &[(String, Option<RegressionReport>)], decimals: usize) -> String {
    let mut out = String::new();
    if !title.is_empty() {
        let _ = writeln!(out, "### {title}\n");
    }
    let _ = writeln!(out, "| Model | {} |", METRIC_COLUMNS.join(" | "));
    let _ = writeln!(out, "|---|{}", "---:|".repeat(METRIC_COLUMNS.len()));
    for (model, report) in rows {
        let cells: Vec<String> = match report {
            Some(r) => [
                Score::Defined(r.mse),
                Score::Defined(r.mae),
                Score::Defined(r.rmse),
                r.r2,
                Score::Defined(r.smape),
                r.pearson_r,
                r.ccc,
            ]
            .iter()
            .map(|s| s.render(decimals))
            .collect(),
            None => vec!["NaN".to_string(); METRIC_COLUMNS.len()],
        };
        let _ = writeln!(out, "| {model} | {} |", cells.join(" | "));
    }
    out
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PredictionRow {
    pub image_path: String,
    pub actual: f64,
    pub predicted: f64,
    pub model_tag: String,
    pub parameter: String,
}

/// Read `image_path,actual,predicted,model_tag,parameter`.
pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>, MetricsError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| MetricsError::Input(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| MetricsError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    let expected = ["image_path", "actual", "predicted", "model_tag", "parameter"];
    if header != expected {
        return Err(MetricsError::Input(format!(
            "{}: header [{}] differs from [{}]",
            path.display(),
            header.join(","),
            expected.join(",")
        )));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            let row: PredictionRow =
                r.map_err(|e| MetricsError::Input(format!("{} row {}: {e}", path.display(), i + 1)))?;
            if !row.actual.is_finite() || !row.predicted.is_finite() {
                return Err(MetricsError::NonFinite(i));
            }
            Ok(row)
        })
        .collect()
}
