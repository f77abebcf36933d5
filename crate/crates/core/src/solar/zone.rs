use std::fmt;

use chrono::{DateTime, FixedOffset, Utc};
use chrono_tz::Tz;

use super::SolarError;
use crate::ingest::SiteDescriptor;

/// A resolved IANA zone for one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoneRule {
    tz: Tz,
}

impl ZoneRule {
    pub fn from_id(zone_id: &str) -> Result<Self, SolarError> {
        zone_id
            .trim()
            .parse::<Tz>()
            .map(|tz| Self { tz })
            .map_err(|_| SolarError::UnknownZone(zone_id.to_string()))
    }

    pub fn utc() -> Self {
        Self { tz: Tz::UTC }
    }

    /// Zone from the registry column when present, else from the
    /// coordinate fallback table for U.S. states and territories.
    pub fn resolve(site: &SiteDescriptor) -> Result<Self, SolarError> {
        match site.zone.as_deref().map(str::trim) {
            Some(z) if !z.is_empty() => Self::from_id(z),
            _ => us_fallback(&site.state, site.latitude, site.longitude)
                .ok_or_else(|| {
                    SolarError::UnknownZone(format!(
                        "site {} (state {:?}) has no zone and no fallback rule",
                        site.site_code, site.state
                    ))
                })
                .and_then(Self::from_id),
        }
    }

    pub fn zone_id(&self) -> &'static str {
        self.tz.name()
    }

    pub fn tz(&self) -> Tz {
        self.tz
    }
}

impl fmt::Display for ZoneRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.zone_id())
    }
}

/// The same instant expressed with the zone's offset in effect at that instant.
pub fn to_local(captured_utc: DateTime<Utc>, zone: &ZoneRule) -> DateTime<FixedOffset> {
    captured_utc.with_timezone(&zone.tz).fixed_offset()
}

/// Coarse state → zone table. States split by a time-zone boundary use a
/// longitude (or latitude) cut that follows the boundary to county scale.
fn us_fallback(state: &str, lat: f64, lon: f64) -> Option<&'static str> {
    const EASTERN: &str = "America/New_York";
    const CENTRAL: &str = "America/Chicago";
    const MOUNTAIN: &str = "America/Denver";
    const PACIFIC: &str = "America/Los_Angeles";
    let zone = match state.trim().to_ascii_uppercase().as_str() {
        "CT" | "DE" | "DC" | "GA" | "ME" | "MD" | "MA" | "NH" | "NJ" | "NY" | "NC" | "OH"
        | "PA" | "RI" | "SC" | "VT" | "VA" | "WV" => EASTERN,
        "MI" => {
            if lon < -87.6 && lat < 46.5 && lat > 45.0 {
                "America/Menominee"
            } else {
                "America/Detroit"
            }
        }
        "IN" => {
            if lon < -86.8 && (lat > 41.0 || lat < 38.5) {
                CENTRAL
            } else {
                "America/Indiana/Indianapolis"
            }
        }
        "KY" => {
            if lon < -85.9 {
                CENTRAL
            } else {
                "America/Kentucky/Louisville"
            }
        }
        "TN" => {
            if lon < -85.2 {
                CENTRAL
            } else {
                EASTERN
            }
        }
        "FL" => {
            if lon < -85.0 {
                CENTRAL
            } else {
                EASTERN
            }
        }
        "AL" | "AR" | "IL" | "IA" | "LA" | "MN" | "MS" | "MO" | "OK" | "WI" => CENTRAL,
        "TX" => {
            if lon < -104.9 {
                MOUNTAIN
            } else {
                CENTRAL
            }
        }
        "KS" => {
            if lon < -101.5 && lat < 39.6 && lat > 37.7 {
                MOUNTAIN
            } else {
                CENTRAL
            }
        }
        "NE" => {
            if lon < -101.0 {
                MOUNTAIN
            } else {
                CENTRAL
            }
        }
        "SD" => {
            if lon < -100.3 {
                MOUNTAIN
            } else {
                CENTRAL
            }
        }
        "ND" => {
            if lon < -101.0 && lat < 47.5 {
                MOUNTAIN
            } else {
                CENTRAL
            }
        }
        "CO" | "MT" | "NM" | "UT" | "WY" => MOUNTAIN,
        "ID" => {
            if lat > 45.5 {
                PACIFIC
            } else {
                "America/Boise"
            }
        }
        "OR" => {
            if lon > -117.7 && lat < 44.5 {
                "America/Boise"
            } else {
                PACIFIC
            }
        }
        "AZ" => "America/Phoenix",
        "CA" | "NV" | "WA" => PACIFIC,
        "AK" => {
            if lon < -169.5 {
                "America/Adak"
            } else {
                "America/Anchorage"
            }
        }
        "HI" => "Pacific/Honolulu",
        "PR" => "America/Puerto_Rico",
        "VI" => "America/St_Thomas",
        "GU" => "Pacific/Guam",
        "AS" => "Pacific/Pago_Pago",
        _ => return None,
    };
    Some(zone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn site(state: &str, lat: f64, lon: f64, zone: Option<&str>) -> SiteDescriptor {
        SiteDescriptor {
            site_code: "01".into(),
            site_name: "Test".into(),
            state: state.into(),
            latitude: lat,
            longitude: lon,
            portal_name: "TEST".into(),
            zone: zone.map(String::from),
        }
    }

    #[test]
    fn utc_zone_is_identity() {
        let t = Utc.with_ymd_and_hms(2022, 6, 1, 14, 15, 0).unwrap();
        let local = to_local(t, &ZoneRule::utc());
        assert_eq!(local.to_rfc3339(), "2022-06-01T14:15:00+00:00");
    }

    #[test]
    fn eastern_daylight_offset() {
        let t = Utc.with_ymd_and_hms(2022, 6, 1, 14, 15, 0).unwrap();
        let zone = ZoneRule::from_id("America/New_York").unwrap();
        assert_eq!(to_local(t, &zone).to_rfc3339(), "2022-06-01T10:15:00-04:00");
    }

    #[test]
    fn conversion_inside_fall_back_hour_is_unambiguous() {
        let zone = ZoneRule::from_id("America/New_York").unwrap();
        // 2022-11-06 01:30 local happens twice; UTC picks one.
        let first = Utc.with_ymd_and_hms(2022, 11, 6, 5, 30, 0).unwrap();
        let second = Utc.with_ymd_and_hms(2022, 11, 6, 6, 30, 0).unwrap();
        assert_eq!(to_local(first, &zone).to_rfc3339(), "2022-11-06T01:30:00-04:00");
        assert_eq!(to_local(second, &zone).to_rfc3339(), "2022-11-06T01:30:00-05:00");
    }

    #[test]
    fn explicit_zone_wins_over_fallback() {
        let s = site("NE", 41.0, -96.0, Some("America/Denver"));
        assert_eq!(ZoneRule::resolve(&s).unwrap().zone_id(), "America/Denver");
        let s = site("NE", 41.0, -96.0, None);
        assert_eq!(ZoneRule::resolve(&s).unwrap().zone_id(), "America/Chicago");
    }

    #[test]
    fn unresolvable_sites_are_errors() {
        assert!(matches!(
            ZoneRule::resolve(&site("ZZ", 0.0, 0.0, None)),
            Err(SolarError::UnknownZone(_))
        ));
        assert!(matches!(
            ZoneRule::resolve(&site("NY", 0.0, 0.0, Some("Mars/Olympus"))),
            Err(SolarError::UnknownZone(_))
        ));
    }
}
