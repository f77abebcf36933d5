use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AlignError;
use crate::ingest::{DayNight, ImageRecord, ParameterId, ParameterSample};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeDirection {
    /// Closest sample on either side; equal distances go to the earlier sample.
    #[default]
    Nearest,
    /// Latest sample at or before the image.
    Backward,
    /// Earliest sample at or after the image.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Inclusive bound on |sample time − image time|.
    #[serde(with = "minutes")]
    pub tolerance: TimeDelta,
    pub direction: MergeDirection,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            tolerance: TimeDelta::minutes(60),
            direction: MergeDirection::Nearest,
        }
    }
}

mod minutes {
    use chrono::TimeDelta;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &TimeDelta, s: S) -> Result<S::Ok, S::Error> {
        (d.num_milliseconds() as f64 / 60_000.0).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TimeDelta, D::Error> {
        let m = f64::deserialize(d)?;
        Ok(TimeDelta::milliseconds((m * 60_000.0).round() as i64))
    }
}

/// One image labeled with one parameter's value from its matched sample row.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub image_path: String,
    pub site_code: String,
    pub image_time_utc: DateTime<Utc>,
    pub sample_time_utc: DateTime<Utc>,
    /// sample − image
    pub gap: TimeDelta,
    pub parameter: ParameterId,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    pub images_in: usize,
    /// Images skipped because they were not classified Day.
    pub not_day: usize,
    /// Day images with no sample within tolerance.
    pub unmatched: usize,
    /// Day images whose matched row had none of the requested values.
    pub matched_without_values: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeOutput {
    /// Ordered by (site_code, image time), then input order, then slot.
    pub aligned: Vec<AlignedSample>,
    pub stats: MergeStats,
}

fn check_sorted<T>(
    rows: &[&T],
    time: impl Fn(&T) -> DateTime<Utc>,
    strict: bool,
    what: &'static str,
    site_code: &str,
) -> Result<(), AlignError> {
    for (i, w) in rows.windows(2).enumerate() {
        let (a, b) = (time(w[0]), time(w[1]));
        if b < a || (strict && b == a) {
            return Err(AlignError::UnsortedInput {
                what,
                site_code: site_code.to_string(),
                index: i + 1,
            });
        }
    }
    Ok(())
}

/// Index of the sample row matched to `t`, if any lies within tolerance.
fn match_row(times: &[DateTime<Utc>], t: DateTime<Utc>, cfg: &MergeConfig) -> Option<usize> {
    let after = times.partition_point(|s| *s < t);
    let at_or_before = times.partition_point(|s| *s <= t).checked_sub(1);
    let backward = at_or_before.filter(|&i| t - times[i] <= cfg.tolerance);
    let forward = Some(after)
        .filter(|&i| i < times.len())
        .filter(|&i| times[i] - t <= cfg.tolerance);
    match cfg.direction {
        MergeDirection::Backward => backward,
        MergeDirection::Forward => forward,
        MergeDirection::Nearest => match (backward, forward) {
            (Some(b), Some(f)) => {
                if times[f] - t < t - times[b] {
                    Some(f)
                } else {
                    Some(b)
                }
            }
            (b, f) => b.or(f),
        },
    }
}

/// Join each Day image to the sample row of its site selected by the
/// direction rule, emitting one [`AlignedSample`] per requested parameter
/// that has a value in that row.
///
/// Images must be in nondecreasing time order within each site and samples
/// in strictly increasing order within each site. Values are passed through
/// unfiltered; [`super::build_dictionary`] applies the validity filter.
pub fn asof_merge(
    images: &[ImageRecord],
    samples: &[ParameterSample],
    params: &[ParameterId],
    cfg: &MergeConfig,
) -> Result<MergeOutput, AlignError> {
    if cfg.tolerance < TimeDelta::zero() {
        return Err(AlignError::InvalidTolerance);
    }
    let mut by_site: BTreeMap<&str, (Vec<&ImageRecord>, Vec<&ParameterSample>)> = BTreeMap::new();
    for img in images {
        by_site.entry(&img.site_code).or_default().0.push(img);
    }
    for s in samples {
        by_site.entry(&s.site_code).or_default().1.push(s);
    }

    let shards: Vec<Result<MergeOutput, AlignError>> = by_site
        .into_par_iter()
        .map(|(site, (imgs, rows))| {
            check_sorted(&imgs, |r: &ImageRecord| r.captured_utc, false, "images", site)?;
            check_sorted(&rows, |r: &ParameterSample| r.timestamp, true, "parameter samples", site)?;
            let times: Vec<DateTime<Utc>> = rows.iter().map(|r| r.timestamp).collect();
            let mut out = MergeOutput::default();
            out.stats.images_in = imgs.len();
            for img in imgs {
                if img.day_night != DayNight::Day {
                    out.stats.not_day += 1;
                    continue;
                }
                let Some(i) = match_row(&times, img.captured_utc, cfg) else {
                    out.stats.unmatched += 1;
                    continue;
                };
                let row = rows[i];
                let before = out.aligned.len();
                for &p in params {
                    if let Some(value) = row.get(p) {
                        out.aligned.push(AlignedSample {
                            image_path: img.path.clone(),
                            site_code: img.site_code.clone(),
                            image_time_utc: img.captured_utc,
                            sample_time_utc: row.timestamp,
                            gap: row.timestamp - img.captured_utc,
                            parameter: p,
                            value,
                        });
                    }
                }
                if out.aligned.len() == before {
                    out.stats.matched_without_values += 1;
                } else {
                    out.stats.matched += 1;
                }
            }
            Ok(out)
        })
        .collect();

    let mut merged = MergeOutput::default();
    for shard in shards {
        let shard = shard?;
        merged.aligned.extend(shard.aligned);
        let (s, t) = (&mut merged.stats, shard.stats);
        s.images_in += t.images_in;
        s.not_day += t.not_day;
        s.unmatched += t.unmatched;
        s.matched_without_values += t.matched_without_values;
        s.matched += t.matched;
    }
    Ok(merged)
}
