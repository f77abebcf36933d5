use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::merge::{AlignedSample, MergeConfig, MergeDirection, MergeOutput, MergeStats};
use super::AlignError;
use crate::ingest::{Parameter, ParameterId, ParameterSample, SLOT_COUNT};

/// Unit chosen for one parameter, with the audit counts behind the choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitChoice {
    pub parameter: Parameter,
    /// `None` when every unit column is entirely null.
    pub chosen: Option<ParameterId>,
    /// Non-null count per unit column, in listing order.
    pub counts: Vec<(ParameterId, usize)>,
    /// Units whose count equalled the chosen one's (the tie was broken by listing order).
    pub tied_with: Vec<ParameterId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSelection {
    /// One entry per parameter, in listing order.
    pub choices: Vec<UnitChoice>,
}

impl UnitSelection {
    /// Pick, per parameter, the unit with the most non-null values; ties go
    /// to the unit listed first.
    pub fn from_counts(counts: &[usize; SLOT_COUNT]) -> Self {
        let choices = Parameter::ALL
            .iter()
            .map(|&parameter| {
                let per_unit: Vec<(ParameterId, usize)> = ParameterId::ALL
                    .iter()
                    .filter(|id| id.name() == parameter)
                    .map(|&id| (id, counts[id.slot()]))
                    .collect();
                let max = per_unit.iter().map(|(_, c)| *c).max().unwrap_or(0);
                let (chosen, tied_with) = if max == 0 {
                    warn!("{} has no non-null values in any unit; excluded", parameter.display_name());
                    (None, Vec::new())
                } else {
                    let mut at_max = per_unit.iter().filter(|(_, c)| *c == max).map(|(id, _)| *id);
                    let first = at_max.next();
                    (first, at_max.collect())
                };
                UnitChoice {
                    parameter,
                    chosen,
                    counts: per_unit,
                    tied_with,
                }
            })
            .collect();
        Self { choices }
    }

    pub fn chosen(&self, parameter: Parameter) -> Option<ParameterId> {
        self.choices.iter().find(|c| c.parameter == parameter).and_then(|c| c.chosen)
    }

    pub fn selected_ids(&self) -> Vec<ParameterId> {
        self.choices.iter().filter_map(|c| c.chosen).collect()
    }

    /// Parameters excluded because all their unit columns are null.
    pub fn all_null(&self) -> Vec<Parameter> {
        self.choices.iter().filter(|c| c.chosen.is_none()).map(|c| c.parameter).collect()
    }
}

/// Unit selection over raw parameter rows.
pub fn select_units(samples: &[ParameterSample]) -> Result<UnitSelection, AlignError> {
    if samples.is_empty() {
        return Err(AlignError::EmptyInput);
    }
    let mut counts = [0usize; SLOT_COUNT];
    for s in samples {
        for (c, v) in counts.iter_mut().zip(s.values()) {
            *c += usize::from(v.is_some());
        }
    }
    Ok(UnitSelection::from_counts(&counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub image_path: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: Parameter,
    /// Column name of the chosen unit, absent for all-null parameters.
    pub unit: Option<ParameterId>,
    pub unit_label: Option<String>,
    pub rows: usize,
    pub dropped_negative: usize,
    pub dropped_non_finite: usize,
    pub unit_counts: BTreeMap<String, usize>,
    pub tied_with: Vec<ParameterId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySummary {
    pub direction: MergeDirection,
    pub tolerance_minutes: f64,
    pub merge: MergeStats,
    pub parameters: Vec<ParameterSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// Only parameters with a chosen unit appear.
    pub datasets: BTreeMap<Parameter, Vec<DatasetRow>>,
    pub summary: DictionarySummary,
}

/// Split the aligned samples into one dataset per parameter, keeping only
/// the chosen unit and non-negative finite values.
pub fn build_dictionary(merged: &MergeOutput, selection: &UnitSelection, cfg: &MergeConfig) -> Dictionary {
    build_from_aligned(&merged.aligned, merged.stats, selection, cfg)
}

pub(crate) fn build_from_aligned(
    aligned: &[AlignedSample],
    stats: MergeStats,
    selection: &UnitSelection,
    cfg: &MergeConfig,
) -> Dictionary {
    let mut datasets = BTreeMap::new();
    let mut parameters = Vec::new();
    for choice in &selection.choices {
        let mut summary = ParameterSummary {
            parameter: choice.parameter,
            unit: choice.chosen,
            unit_label: choice.chosen.map(|id| id.unit().label().to_string()),
            rows: 0,
            dropped_negative: 0,
            dropped_non_finite: 0,
            unit_counts: choice.counts.iter().map(|(id, c)| (id.column(), *c)).collect(),
            tied_with: choice.tied_with.clone(),
        };
        if let Some(id) = choice.chosen {
            let mut rows = Vec::new();
            for a in aligned.iter().filter(|a| a.parameter == id) {
                if !a.value.is_finite() {
                    summary.dropped_non_finite += 1;
                } else if a.value < 0.0 {
                    summary.dropped_negative += 1;
                } else {
                    rows.push(DatasetRow {
                        image_path: a.image_path.clone(),
                        value: a.value,
                    });
                }
            }
            summary.rows = rows.len();
            datasets.insert(choice.parameter, rows);
        }
        parameters.push(summary);
    }
    Dictionary {
        datasets,
        summary: DictionarySummary {
            direction: cfg.direction,
            tolerance_minutes: cfg.tolerance.num_milliseconds() as f64 / 60_000.0,
            merge: stats,
            parameters,
        },
    }
}

/// Deterministic shuffled split with `ceil(n · fraction)` training rows.
pub fn split_train_val<T: Clone>(rows: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), AlignError> {
    if rows.is_empty() {
        return Err(AlignError::EmptyInput);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AlignError::InvalidFraction(fraction));
    }
    let n = rows.len();
    let n_train = ((n as f64 * fraction - 1e-9).ceil() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ix: &[usize]| ix.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}

/// Write a dataset as `image_path,value`.
pub fn write_dataset_csv(rows: &[DatasetRow], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image_path", "value"])?;
    for r in rows {
        w.write_record([r.image_path.as_str(), &r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Unit;
    use chrono::{TimeZone, Utc};

    fn id(p: Parameter, u: Unit) -> ParameterId {
        ParameterId::new(p, u).unwrap()
    }

    #[test]
    fn max_count_wins_and_ties_follow_listing_order() {
        let mut counts = [0usize; SLOT_COUNT];
        counts[id(Parameter::Turbidity, Unit::Fnu).slot()] = 480_125;
        counts[id(Parameter::Turbidity, Unit::Ntu).slot()] = 12_000;
        counts[id(Parameter::Cdom, Unit::PpbQse).slot()] = 10;
        counts[id(Parameter::Cdom, Unit::Rfu).slot()] = 10;
        let sel = UnitSelection::from_counts(&counts);
        assert_eq!(sel.chosen(Parameter::Turbidity), Some(id(Parameter::Turbidity, Unit::Fnu)));
        assert_eq!(sel.chosen(Parameter::Cdom), Some(id(Parameter::Cdom, Unit::PpbQse)));
        let cdom = sel.choices.iter().find(|c| c.parameter == Parameter::Cdom).unwrap();
        assert_eq!(cdom.tied_with, vec![id(Parameter::Cdom, Unit::Rfu)]);
        assert!(sel.all_null().contains(&Parameter::Phycocyanin));
        assert_eq!(sel.chosen(Parameter::Phycocyanin), None);
    }

    #[test]
    fn dictionary_filters_negative_and_keeps_zero() {
        let fnu = id(Parameter::Turbidity, Unit::Fnu);
        let t = Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap();
        let a = |path: &str, value: f64| AlignedSample {
            image_path: path.into(),
            site_code: "A".into(),
            image_time_utc: t,
            sample_time_utc: t,
            gap: chrono::TimeDelta::zero(),
            parameter: fnu,
            value,
        };
        let merged = MergeOutput {
            aligned: vec![a("x", -3.0), a("y", 0.0), a("z", 2.5)],
            stats: MergeStats::default(),
        };
        let mut counts = [0; SLOT_COUNT];
        counts[fnu.slot()] = 3;
        let d = build_dictionary(&merged, &UnitSelection::from_counts(&counts), &MergeConfig::default());
        let rows = &d.datasets[&Parameter::Turbidity];
        assert_eq!(rows.iter().map(|r| r.image_path.as_str()).collect::<Vec<_>>(), ["y", "z"]);
        let s = d.summary.parameters.iter().find(|p| p.parameter == Parameter::Turbidity).unwrap();
        assert_eq!((s.rows, s.dropped_negative), (2, 1));
        assert_eq!(d.datasets.len(), 1);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ten: Vec<u32> = (0..10).collect();
        let (tr, va) = split_train_val(&ten, 0.8, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr5, va5) = split_train_val(&ten[..5], 0.8, 1).unwrap();
        assert_eq!((tr5.len(), va5.len()), (4, 1));
        assert_eq!(split_train_val(&ten, 0.8, 9).unwrap(), split_train_val(&ten, 0.8, 9).unwrap());
        let mut all = [tr, va].concat();
        all.sort();
        assert_eq!(all, ten);
        assert!(split_train_val::<u32>(&[], 0.8, 1).is_err());
    }
}
