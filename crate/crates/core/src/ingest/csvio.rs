//! CSV forms of the catalog, site registry and parameter table.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use super::types::{DayNight, ImageRecord, ParameterId, ParameterSample, SiteDescriptor};
use super::IngestError;

/// Fixed column order of `catalog.csv`.
pub const CATALOG_COLUMNS: [&str; 7] = [
    "image_path",
    "site_code",
    "site_name",
    "timestamp_utc",
    "state",
    "day_night",
    "water_fraction",
];

pub const SITE_COLUMNS: [&str; 7] = [
    "site_code",
    "site_name",
    "state",
    "latitude",
    "longitude",
    "portal_name",
    "zone",
];

const PARAMETER_KEY_COLUMNS: [&str; 3] = ["site_code", "site_name", "timestamp_utc"];

/// `site_code,site_name,timestamp_utc` followed by the sixteen slot columns.
pub fn parameter_columns() -> Vec<String> {
    PARAMETER_KEY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(ParameterId::ALL.iter().map(|p| p.column()))
        .collect()
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, false)
}

/// Parse an ISO-8601 timestamp that carries an explicit offset and
/// normalize it to UTC. Naive timestamps are rejected.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("timestamp {s:?} is not ISO-8601 with an explicit offset: {e}"))
}

fn io_err(path: &Path, e: impl Into<std::io::Error>) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        other => IngestError::InvalidRecord {
            path: path.to_path_buf(),
            line: 0,
            detail: format!("{other:?}"),
        },
    }
}

fn invalid(path: &Path, line: u64, detail: impl Into<String>) -> IngestError {
    IngestError::InvalidRecord {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// Compare a header against the expected column list and describe any
/// difference (missing, extra or reordered columns).
pub fn check_header(path: &Path, expected: &[&str], found: &[String]) -> Result<(), IngestError> {
    if found.len() == expected.len() && found.iter().zip(expected).all(|(f, e)| f == e) {
        return Ok(());
    }
    let missing: Vec<String> = expected
        .iter()
        .filter(|e| !found.iter().any(|f| f == *e))
        .map(|e| e.to_string())
        .collect();
    let extra: Vec<String> = found
        .iter()
        .filter(|f| !expected.contains(&f.as_str()))
        .cloned()
        .collect();
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing columns [{}]", missing.join(", ")));
    }
    if !extra.is_empty() {
        parts.push(format!("extra columns [{}]", extra.join(", ")));
    }
    if missing.is_empty() && extra.is_empty() {
        parts.push(format!(
            "columns reordered: expected [{}], found [{}]",
            expected.join(", "),
            found.join(", ")
        ));
    }
    Err(IngestError::SchemaMismatch {
        path: path.to_path_buf(),
        missing,
        extra,
        detail: parts.join("; "),
    })
}

fn create(path: &Path) -> Result<File, IngestError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
    }
    File::create(path).map_err(|e| io_err(path, e))
}

pub fn write_catalog<W: Write>(records: &[ImageRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CATALOG_COLUMNS)?;
    for r in records {
        let fraction = r.water_fraction.map(|f| f.to_string()).unwrap_or_default();
        w.write_record([
            r.path.as_str(),
            r.site_code.as_str(),
            r.site_name.as_str(),
            &format_timestamp(r.captured_utc),
            r.state.as_str(),
            r.day_night.as_str(),
            &fraction,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `catalog.csv`. An empty record list produces a header-only file.
pub fn write_catalog_csv(records: &[ImageRecord], path: &Path) -> Result<(), IngestError> {
    let file = create(path)?;
    write_catalog(records, file).map_err(|e| csv_err(path, e))
}

pub fn read_catalog<R: Read>(input: R, path: &Path) -> Result<Vec<ImageRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    check_header(path, &CATALOG_COLUMNS, &header)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let captured_utc = parse_timestamp(&row[3]).map_err(|e| invalid(path, line, e))?;
        let day_night: DayNight = row[5].parse().map_err(|e: String| invalid(path, line, e))?;
        let water_fraction = if row[6].is_empty() {
            None
        } else {
            let f: f64 = row[6]
                .parse()
                .map_err(|e| invalid(path, line, format!("water_fraction {:?}: {e}", &row[6])))?;
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(path, line, format!("water_fraction {f} outside [0, 1]")));
            }
            Some(f)
        };
        out.push(ImageRecord {
            path: row[0].to_string(),
            site_code: row[1].to_string(),
            site_name: row[2].to_string(),
            captured_utc,
            state: row[4].to_string(),
            local_time: None,
            day_night,
            water_fraction,
        });
    }
    Ok(out)
}

pub fn read_catalog_csv(path: &Path) -> Result<Vec<ImageRecord>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_catalog(file, path)
}

/// Read a site registry. Column order is free; `zone` may be omitted.
pub fn read_sites_csv(path: &Path) -> Result<Vec<SiteDescriptor>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let missing: Vec<String> = SITE_COLUMNS[..6]
        .iter()
        .filter(|c| !header.iter().any(|h| h == *c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::SchemaMismatch {
            path: path.to_path_buf(),
            detail: format!("missing columns [{}]", missing.join(", ")),
            missing,
            extra: vec![],
        });
    }
    let mut sites: Vec<SiteDescriptor> = Vec::new();
    for row in rdr.deserialize() {
        let site: SiteDescriptor = row.map_err(|e| csv_err(path, e))?;
        site.validate()?;
        if sites.iter().any(|s| s.site_code == site.site_code) {
            return Err(IngestError::InvalidSite(format!(
                "duplicate site_code {} in {}",
                site.site_code,
                path.display()
            )));
        }
        sites.push(site);
    }
    Ok(sites)
}

pub fn write_sites_csv(sites: &[SiteDescriptor], path: &Path) -> Result<(), IngestError> {
    let file = create(path)?;
    let mut w = csv::Writer::from_writer(file);
    let result = (|| {
        w.write_record(SITE_COLUMNS)?;
        for s in sites {
            w.write_record([
                s.site_code.as_str(),
                s.site_name.as_str(),
                s.state.as_str(),
                &s.latitude.to_string(),
                &s.longitude.to_string(),
                s.portal_name.as_str(),
                s.zone.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(|e| csv_err(path, e))
}

pub fn write_parameters<W: Write>(samples: &[ParameterSample], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(parameter_columns())?;
    for s in samples {
        let mut row = vec![
            s.site_code.clone(),
            s.site_name.clone(),
            format_timestamp(s.timestamp),
        ];
        row.extend(
            s.values()
                .iter()
                .map(|v| v.map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_parameters_csv(samples: &[ParameterSample], path: &Path) -> Result<(), IngestError> {
    let file = create(path)?;
    write_parameters(samples, file).map_err(|e| csv_err(path, e))
}

pub fn read_parameters_csv(path: &Path) -> Result<Vec<ParameterSample>, IngestError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected = parameter_columns();
    let expected_refs: Vec<&str> = expected.iter().map(String::as_str).collect();
    check_header(path, &expected_refs, &header)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let ts = parse_timestamp(&row[2]).map_err(|e| invalid(path, line, e))?;
        let mut sample = ParameterSample::new(&row[0], &row[1], ts);
        for (i, id) in ParameterId::ALL.iter().enumerate() {
            let cell = &row[3 + i];
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|e| invalid(path, line, format!("{id} value {cell:?}: {e}")))?;
            sample
                .set(*id, Some(v))
                .map_err(|e| invalid(path, line, e.to_string()))?;
        }
        out.push(sample);
    }
    Ok(out)
}
