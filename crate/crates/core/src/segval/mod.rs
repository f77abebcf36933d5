//! Segmentation validation against Gaussian-mixture surrogate masks.

mod gmm;
mod mask;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::pairwise_sum;
use crate::Score;

pub use gmm::{fit_gmm, GmmConfig, GmmModel, Samples, VARIANCE_FLOOR};
pub use mask::{
    gate_coverage, gmm_mask, pixel_features, surrogate_mask, water_fraction, BinaryMask,
    PixelFeature, PixelGrid, WaterComponent, DEFAULT_MIN_COVERAGE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegvalError {
    #[error("all samples are identical; no mixture to fit")]
    DegenerateInput,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no metrics to summarize")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cannot decode image {}: {detail}", path.display())]
    Image { path: PathBuf, detail: String },
}

/// Pixel confusion counts with candidate as prediction and reference as truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub tp: u64,
    pub fp: u64,
    pub r#fn: u64,
    pub tn: u64,
    pub iou: Score,
    pub dice: Score,
    pub precision: Score,
    pub recall: Score,
    pub accuracy: Score,
    pub specificity: Score,
}

impl SegMetrics {
    pub fn from_counts(tp: u64, fp: u64, r#fn: u64, tn: u64) -> Self {
        let r = |n: u64, d: u64| Score::ratio(n as f64, d as f64);
        Self {
            tp,
            fp,
            r#fn,
            tn,
            iou: r(tp, tp + fp + r#fn),
            dice: r(2 * tp, 2 * tp + fp + r#fn),
            precision: r(tp, tp + fp),
            recall: r(tp, tp + r#fn),
            accuracy: r(tp + tn, tp + fp + r#fn + tn),
            specificity: r(tn, tn + fp),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.r#fn + self.tn
    }

    /// The six ratios in their canonical order.
    pub fn scores(&self) -> [(&'static str, Score); 6] {
        [
            ("iou", self.iou),
            ("dice", self.dice),
            ("precision", self.precision),
            ("recall", self.recall),
            ("accuracy", self.accuracy),
            ("specificity", self.specificity),
        ]
    }
}

pub fn compare_masks(candidate: &BinaryMask, reference: &BinaryMask) -> Result<SegMetrics, SegvalError> {
    if candidate.width() != reference.width() || candidate.height() != reference.height() {
        return Err(SegvalError::DimensionMismatch(
            candidate.width(),
            candidate.height(),
            reference.width(),
            reference.height(),
        ));
    }
    let mut counts = [0u64; 4];
    for (&c, &r) in candidate.bits().iter().zip(reference.bits()) {
        counts[usize::from(!r) * 2 + usize::from(!c)] += 1;
    }
    // counts: [tp, fn, fp, tn] by (truth, prediction)
    Ok(SegMetrics::from_counts(counts[0], counts[2], counts[1], counts[3]))
}

/// Strict lower bounds a comparison must beat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegGates {
    pub iou: f64,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Default for SegGates {
    fn default() -> Self {
        Self {
            iou: 0.5,
            dice: 0.2,
            precision: 0.1,
            recall: 0.2,
        }
    }
}

/// True iff every gated metric is defined and strictly above its bound.
pub fn gate_segmentation(m: &SegMetrics, gates: &SegGates) -> bool {
    m.iou.exceeds(gates.iou)
        && m.dice.exceeds(gates.dice)
        && m.precision.exceeds(gates.precision)
        && m.recall.exceeds(gates.recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Score,
    /// Sample standard deviation; 0 for a single value (see `single_value`).
    pub stddev: Score,
    pub count: usize,
    pub excluded_undefined: usize,
    pub single_value: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegSummary {
    pub iou: MetricSummary,
    pub dice: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub accuracy: MetricSummary,
    pub specificity: MetricSummary,
}

fn summarize(values: impl Iterator<Item = Score>) -> MetricSummary {
    let mut excluded = 0;
    let defined: Vec<f64> = values
        .filter_map(|s| {
            if s.value().is_none() {
                excluded += 1;
            }
            s.value()
        })
        .collect();
    let n = defined.len();
    if n == 0 {
        return MetricSummary {
            mean: Score::Undefined,
            stddev: Score::Undefined,
            count: 0,
            excluded_undefined: excluded,
            single_value: false,
        };
    }
    let mean = pairwise_sum(&defined) / n as f64;
    let stddev = if n == 1 {
        0.0
    } else {
        let sq: Vec<f64> = defined.iter().map(|v| (v - mean) * (v - mean)).collect();
        (pairwise_sum(&sq) / (n - 1) as f64).sqrt()
    };
    MetricSummary {
        mean: Score::Defined(mean),
        stddev: Score::Defined(stddev),
        count: n,
        excluded_undefined: excluded,
        single_value: n == 1,
    }
}

/// Per-metric mean and sample standard deviation, in input order.
pub fn summarize_metrics(metrics: &[SegMetrics]) -> Result<SegSummary, SegvalError> {
    if metrics.is_empty() {
        return Err(SegvalError::EmptyInput);
    }
    let s = |f: fn(&SegMetrics) -> Score| summarize(metrics.iter().map(f));
    Ok(SegSummary {
        iou: s(|m| m.iou),
        dice: s(|m| m.dice),
        precision: s(|m| m.precision),
        recall: s(|m| m.recall),
        accuracy: s(|m| m.accuracy),
        specificity: s(|m| m.specificity),
    })
}

/// Settings for scoring a batch of images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegvalConfig {
    pub gmm: GmmConfig,
    pub feature: PixelFeature,
    pub water_component: WaterComponent,
    pub gates: SegGates,
    pub min_coverage: f64,
}

impl Default for SegvalConfig {
    fn default() -> Self {
        Self {
            gmm: GmmConfig::default(),
            feature: PixelFeature::default(),
            water_component: WaterComponent::default(),
            gates: SegGates::default(),
            min_coverage: DEFAULT_MIN_COVERAGE,
        }
    }
}

/// Outcome for one image whose candidate mask was scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEvaluation {
    pub metrics: SegMetrics,
    /// Water fraction of the candidate mask.
    pub water_fraction: f64,
    pub seg_pass: bool,
    pub coverage_pass: bool,
}

impl ImageEvaluation {
    /// Coverage is checked after the segmentation gate.
    pub fn kept(&self) -> bool {
        self.seg_pass && self.coverage_pass
    }
}

pub fn evaluate_pair(image: &PixelGrid, candidate: &BinaryMask, cfg: &SegvalConfig) -> Result<ImageEvaluation, SegvalError> {
    let (reference, _) = surrogate_mask(image, &cfg.gmm, cfg.feature, cfg.water_component)?;
    let metrics = compare_masks(candidate, &reference)?;
    let fraction = water_fraction(candidate);
    Ok(ImageEvaluation {
        metrics,
        water_fraction: fraction,
        seg_pass: gate_segmentation(&metrics, &cfg.gates),
        coverage_pass: gate_coverage(fraction, cfg.min_coverage),
    })
}

pub fn evaluate_files(image: &Path, candidate: &Path, cfg: &SegvalConfig) -> Result<ImageEvaluation, SegvalError> {
    evaluate_pair(&PixelGrid::load(image)?, &BinaryMask::load(candidate)?, cfg)
}

/// Score many `(image, candidate mask)` file pairs in parallel; results keep input order.
pub fn evaluate_batch(
    pairs: &[(PathBuf, PathBuf)],
    cfg: &SegvalConfig,
) -> Vec<Result<ImageEvaluation, SegvalError>> {
    pairs
        .par_iter()
        .map(|(img, mask)| evaluate_files(img, mask, cfg))
        .collect()
}
