//! `Site_Name__<timestamp>.jpg` image names.
//!
//! The timestamp is `YYYY-MM-DDTHH<sep>MM<sep>SSZ` in UTC. Object stores do
//! not all accept `:` in keys, so the time separator is configurable.

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::IngestError;

pub const IMAGE_EXTENSION: &str = ".jpg";
const SITE_SEPARATOR: &str = "__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimeSeparator {
    #[default]
    #[serde(rename = "-")]
    Dash,
    #[serde(rename = ":")]
    Colon,
}

impl TimeSeparator {
    pub fn as_char(self) -> char {
        match self {
            TimeSeparator::Dash => '-',
            TimeSeparator::Colon => ':',
        }
    }

    fn pattern(self) -> &'static str {
        match self {
            TimeSeparator::Dash => "%Y-%m-%dT%H-%M-%SZ",
            TimeSeparator::Colon => "%Y-%m-%dT%H:%M:%SZ",
        }
    }
}

fn malformed(filename: &str, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedFilename {
        filename: filename.to_string(),
        reason: reason.into(),
    }
}

/// Split an image file name into its site name and UTC capture instant.
pub fn parse_image_filename(
    filename: &str,
    sep: TimeSeparator,
) -> Result<(String, DateTime<Utc>), IngestError> {
    let stem = filename
        .strip_suffix(IMAGE_EXTENSION)
        .ok_or_else(|| malformed(filename, format!("missing {IMAGE_EXTENSION} extension")))?;
    // Timestamps never contain underscores, so the last separator is the split point.
    let (site, stamp) = stem
        .rsplit_once(SITE_SEPARATOR)
        .ok_or_else(|| malformed(filename, "missing '__' separator"))?;
    if site.is_empty() {
        return Err(malformed(filename, "empty site name"));
    }
    if site.contains(['/', '\\']) {
        return Err(malformed(filename, "site name contains a path separator"));
    }
    let naive = NaiveDateTime::parse_from_str(stamp, sep.pattern())
        .map_err(|e| malformed(filename, format!("unparseable timestamp {stamp:?}: {e}")))?;
    // Reject non-canonical spellings (e.g. missing zero padding) so that
    // formatting the parsed value reproduces the input.
    if naive.format(sep.pattern()).to_string() != stamp {
        return Err(malformed(filename, format!("non-canonical timestamp {stamp:?}")));
    }
    Ok((site.to_string(), naive.and_utc()))
}

/// Inverse of [`parse_image_filename`]. Sub-second precision is dropped.
pub fn format_image_filename(site_name: &str, captured: DateTime<Utc>, sep: TimeSeparator) -> String {
    format!(
        "{site_name}{SITE_SEPARATOR}{}{IMAGE_EXTENSION}",
        captured.format(sep.pattern())
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    #[test]
    fn parses_documented_example() {
        let (site, ts) =
            parse_image_filename("Platte_River__2022-06-01T14-15-00Z.jpg", TimeSeparator::Dash)
                .unwrap();
        assert_eq!(site, "Platte_River");
        assert_eq!(ts, Utc.with_ymd_and_hms(2022, 6, 1, 14, 15, 0).unwrap());
        assert_eq!(ts.to_rfc3339(), "2022-06-01T14:15:00+00:00");
    }

    #[test]
    fn colon_separator() {
        let (_, ts) =
            parse_image_filename("A__2022-06-01T14:15:00Z.jpg", TimeSeparator::Colon).unwrap();
        assert_eq!(ts, Utc.with_ymd_and_hms(2022, 6, 1, 14, 15, 0).unwrap());
        assert!(parse_image_filename("A__2022-06-01T14:15:00Z.jpg", TimeSeparator::Dash).is_err());
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "no-separator.jpg",
            "Site__2022-06-01T14-15-00Z.png",
            "__2022-06-01T14-15-00Z.jpg",
            "Site__2022-13-01T14-15-00Z.jpg",
            "Site__2022-6-1T14-15-00Z.jpg",
            "Site__yesterday.jpg",
        ] {
            let err = parse_image_filename(bad, TimeSeparator::Dash).unwrap_err();
            assert!(matches!(err, IngestError::MalformedFilename { .. }), "{bad}");
        }
    }

    #[test]
    fn underscores_in_site_name_are_preserved() {
        let (site, _) =
            parse_image_filename("Green_Bay_Oil_Depot___2023-01-02T03-04-05Z.jpg", TimeSeparator::Dash)
                .unwrap();
        assert_eq!(site, "Green_Bay_Oil_Depot_");
    }

    fn site_name() -> impl Strategy<Value = String> {
        "[A-Za-z0-9][A-Za-z0-9_]{0,30}"
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn grammar_round_trips(
            site in site_name(),
            secs in 1_500_000_000i64..1_800_000_000i64,
            colon in any::<bool>(),
        ) {
            let sep = if colon { TimeSeparator::Colon } else { TimeSeparator::Dash };
            let ts = Utc.timestamp_opt(secs, 0).unwrap();
            let name = format_image_filename(&site, ts, sep);
            let (s2, t2) = parse_image_filename(&name, sep).unwrap();
            prop_assert_eq!(&s2, &site);
            prop_assert_eq!(t2, ts);
            prop_assert_eq!(format_image_filename(&s2, t2, sep), name);
        }
    }
}
