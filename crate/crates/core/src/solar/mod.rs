//! Site-local time, sunrise/sunset and day/night classification.

mod position;
mod zone;

use std::collections::HashMap;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DayNight, ImageRecord, SiteDescriptor};

pub use position::{
    elevation, event_hour_angle_cos, hour_angle, solar_position, SolarPosition, EVENT_ZENITH_DEG,
};
pub use zone::{to_local, ZoneRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolarError {
    #[error("unknown time zone: {0}")]
    UnknownZone(String),
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("image {path} belongs to site {site_code}, which is not in the registry")]
    UnknownSite { path: String, site_code: String },
    #[error("image {0} has not been classified")]
    UnclassifiedRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Normal,
    PolarDay,
    PolarNight,
}

/// Solar events governing one site-local civil date.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolarDay {
    pub date: NaiveDate,
    /// Upper transit nearest local noon of `date`.
    pub solar_noon_local: DateTime<FixedOffset>,
    pub sunrise_local: Option<DateTime<FixedOffset>>,
    pub sunset_local: Option<DateTime<FixedOffset>>,
    pub regime: Regime,
}

impl SolarDay {
    /// Inclusive at both events.
    pub fn classify(&self, local: DateTime<FixedOffset>) -> DayNight {
        match (self.regime, self.sunrise_local, self.sunset_local) {
            (Regime::PolarDay, _, _) => DayNight::Day,
            (Regime::PolarNight, _, _) => DayNight::Night,
            (Regime::Normal, Some(rise), Some(set)) if rise <= local && local <= set => DayNight::Day,
            _ => DayNight::Night,
        }
    }
}

const CONVERGENCE_SECONDS: f64 = 1e-3;
const MAX_ITERATIONS: usize = 60;

fn unix_seconds(t: DateTime<Utc>) -> f64 {
    t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9
}

fn from_unix_seconds(s: f64) -> DateTime<Utc> {
    let whole = s.floor();
    let nanos = ((s - whole) * 1e9).round().min(999_999_999.0) as u32;
    DateTime::from_timestamp(whole as i64, nanos).expect("instant within chrono range")
}

/// Iterate `t <- t - 240 * residual(t)` where `residual` is in hour-angle degrees.
fn converge(mut t: f64, residual: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..MAX_ITERATIONS {
        let step = residual(t) * 240.0;
        t -= step;
        if step.abs() < CONVERGENCE_SECONDS {
            break;
        }
    }
    t
}

/// Sunrise, sunset and regime for the local civil `date` at a site.
pub fn solar_events(
    date: NaiveDate,
    latitude: f64,
    longitude: f64,
    zone: &ZoneRule,
) -> Result<SolarDay, SolarError> {
    if !(-90.0..=90.0).contains(&latitude) || !latitude.is_finite() {
        return Err(SolarError::InvalidLatitude(latitude));
    }
    let tz = zone.tz();
    let noon = date.and_time(NaiveTime::from_hms_opt(12, 0, 0).expect("valid time"));
    let local_noon = tz
        .from_local_datetime(&noon)
        .earliest()
        .or_else(|| tz.from_local_datetime(&(noon + Duration::hours(1))).earliest())
        .expect("a zone has a valid instant within an hour of noon")
        .with_timezone(&Utc);

    let transit = converge(unix_seconds(local_noon), |t| {
        let pos = solar_position(t);
        hour_angle(t, longitude, pos.equation_of_time)
    });
    let dec = solar_position(transit).declination;
    let cos_h0 = event_hour_angle_cos(latitude, dec);
    let local = |t: f64| from_unix_seconds(t).with_timezone(&tz).fixed_offset();
    let solar_noon_local = local(transit);

    let regime = if cos_h0 > 1.0 {
        Regime::PolarNight
    } else if cos_h0 < -1.0 {
        Regime::PolarDay
    } else {
        Regime::Normal
    };
    if regime != Regime::Normal {
        return Ok(SolarDay {
            date,
            solar_noon_local,
            sunrise_local: None,
            sunset_local: None,
            regime,
        });
    }

    let event = |sign: f64| {
        let h0 = position::event_hour_angle(latitude, dec);
        converge(transit + sign * h0 * 240.0, |t| {
            let pos = solar_position(t);
            let h = position::event_hour_angle(latitude, pos.declination);
            hour_angle(t, longitude, pos.equation_of_time) - sign * h
        })
    };
    let sunrise = event(-1.0);
    let sunset = event(1.0);
    Ok(SolarDay {
        date,
        solar_noon_local,
        sunrise_local: Some(local(sunrise)),
        sunset_local: Some(local(sunset)),
        regime,
    })
}

/// Day iff sunrise ≤ local capture time ≤ sunset on the capture's local date.
pub fn classify_instant(
    captured_utc: DateTime<Utc>,
    latitude: f64,
    longitude: f64,
    zone: &ZoneRule,
) -> Result<(DateTime<FixedOffset>, DayNight), SolarError> {
    let local = to_local(captured_utc, zone);
    let day = solar_events(local.date_naive(), latitude, longitude, zone)?;
    Ok((local, day.classify(local)))
}

pub fn classify_day_night(rec: &ImageRecord, site: &SiteDescriptor) -> Result<DayNight, SolarError> {
    let zone = ZoneRule::resolve(site)?;
    classify_instant(rec.captured_utc, site.latitude, site.longitude, &zone).map(|(_, c)| c)
}

/// Fill `local_time` and `day_night` for every record of a catalog.
pub fn classify_catalog(
    records: &mut [ImageRecord],
    sites: &[SiteDescriptor],
) -> Result<(), SolarError> {
    let mut zones: HashMap<&str, (&SiteDescriptor, ZoneRule)> = HashMap::new();
    for s in sites {
        zones.insert(s.site_code.as_str(), (s, ZoneRule::resolve(s)?));
    }
    records.par_iter_mut().try_for_each(|rec| {
        let (site, zone) = zones.get(rec.site_code.as_str()).ok_or_else(|| SolarError::UnknownSite {
            path: rec.path.clone(),
            site_code: rec.site_code.clone(),
        })?;
        let (local, class) = classify_instant(rec.captured_utc, site.latitude, site.longitude, zone)?;
        rec.local_time = Some(local);
        rec.day_night = class;
        Ok(())
    })
}

/// Keep the Day records; returns them with the number of Night records dropped.
pub fn filter_daytime(catalog: Vec<ImageRecord>) -> Result<(Vec<ImageRecord>, usize), SolarError> {
    if let Some(r) = catalog.iter().find(|r| r.day_night == DayNight::Unclassified) {
        return Err(SolarError::UnclassifiedRecord(r.path.clone()));
    }
    let before = catalog.len();
    let kept: Vec<_> = catalog.into_iter().filter(|r| r.day_night == DayNight::Day).collect();
    let dropped = before - kept.len();
    Ok((kept, dropped))
}
