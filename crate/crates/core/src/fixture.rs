//! Synthetic 200-image corpus with a known outcome at every filter stage.
//!
//! Each image is assigned a [`Role`] up front; pixels, candidate masks,
//! capture times and parameter rows are then generated to produce exactly
//! that outcome. Counts are recoverable from [`Fixture::images`].

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveTime, TimeDelta, TimeZone, Utc};
use chrono_tz::Tz;
use image::codecs::jpeg::JpegEncoder;
use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{
    format_image_filename, write_sites_csv, IngestError, Parameter, ParameterId, ParameterSample,
    SiteDescriptor, TimeRange, TimeSeparator, Unit,
};
use crate::mock::{parameter_export_tsv, MockData};

pub const IMAGE_COUNT: usize = 200;
pub const WIDTH: u32 = 40;
pub const HEIGHT: u32 = 30;
const WATER_ROWS: u32 = 15;
const LOW_WATER_ROWS: u32 = 3;
const JPEG_QUALITY: u8 = 92;
const SEED: u64 = 20_240_501;

/// What the pipeline is designed to do with an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Night,
    /// Candidate mask covers the sky instead of the water.
    SegFail,
    /// Correct candidate mask over a 10% water band.
    LowCoverage,
    /// Kept, but the closest sample lies outside the merge tolerance.
    Unmatched,
    /// Kept and matched; `ordinal` numbers matched images in catalog order.
    Matched { ordinal: usize },
}

impl Role {
    fn of(i: usize, matched_so_far: usize) -> Role {
        match i % 20 {
            0..=4 => Role::Night,
            5..=7 => Role::SegFail,
            8..=9 => Role::LowCoverage,
            10 => Role::Unmatched,
            _ => Role::Matched {
                ordinal: matched_so_far,
            },
        }
    }

    pub fn is_day(self) -> bool {
        self != Role::Night
    }

    pub fn passes_segmentation(self) -> bool {
        !matches!(self, Role::Night | Role::SegFail)
    }

    pub fn passes_coverage(self) -> bool {
        self.passes_segmentation() && self != Role::LowCoverage
    }

    pub fn is_matched(self) -> bool {
        matches!(self, Role::Matched { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureImage {
    pub file_name: String,
    pub catalog_path: String,
    pub site_code: String,
    pub captured_utc: DateTime<Utc>,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub root: PathBuf,
    pub sites_csv: PathBuf,
    pub images_dir: PathBuf,
    pub masks_dir: PathBuf,
    pub sites: Vec<SiteDescriptor>,
    /// In catalog order: grouped by site, capture order within a site.
    pub images: Vec<FixtureImage>,
    /// Parameter rows after duplicate resolution, sorted by site and time.
    pub samples: Vec<ParameterSample>,
    /// Extra rows in the export that a later row overwrites.
    pub duplicate_rows: usize,
    /// Catalog entries whose names do not parse.
    pub malformed_entries: usize,
    pub range: TimeRange,
    pub data: MockData,
}

struct SiteSpec {
    code: &'static str,
    name: &'static str,
    state: &'static str,
    lat: f64,
    lon: f64,
    zone: Tz,
}

const SITES: [SiteSpec; 4] = [
    SiteSpec {
        code: "06770500",
        name: "Platte_River_near_Grand_Island_NE",
        state: "NE",
        lat: 40.8733,
        lon: -98.4620,
        zone: chrono_tz::America::Chicago,
    },
    SiteSpec {
        code: "01646500",
        name: "Potomac_River_near_Washington_DC",
        state: "MD",
        lat: 38.9498,
        lon: -77.1276,
        zone: chrono_tz::America::New_York,
    },
    SiteSpec {
        code: "08330000",
        name: "Rio_Grande_at_Albuquerque_NM",
        state: "NM",
        lat: 35.0892,
        lon: -106.6806,
        zone: chrono_tz::America::Denver,
    },
    SiteSpec {
        code: "14211720",
        name: "Willamette_River_at_Portland_OR",
        state: "OR",
        lat: 45.5173,
        lon: -122.6695,
        zone: chrono_tz::America::Los_Angeles,
    },
];

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode {}: {detail}", path.display())]
    Encode { path: PathBuf, detail: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn first_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 5, 1).expect("valid date")
}

fn local_to_utc(zone: Tz, date: NaiveDate, time: NaiveTime) -> DateTime<Utc> {
    zone.from_local_datetime(&date.and_time(time))
        .earliest()
        .expect("fixture times avoid DST gaps")
        .with_timezone(&Utc)
}

/// Capture instant: near local clock noon for day roles, shortly after local
/// midnight for night roles, jittered by up to ±50 minutes.
fn capture_time(site: &SiteSpec, day: usize, i: usize, role: Role) -> DateTime<Utc> {
    let date = first_date() + TimeDelta::days(day as i64);
    let jitter = ((i * 37) % 101) as i64 - 50;
    let base = if role.is_day() {
        NaiveTime::from_hms_opt(12, 0, 0)
    } else {
        NaiveTime::from_hms_opt(1, 0, 0)
    }
    .expect("valid time");
    let (t, _) = base.overflowing_add_signed(TimeDelta::minutes(jitter));
    local_to_utc(site.zone, date, t)
}

fn water_rows(role: Role) -> u32 {
    if role == Role::LowCoverage {
        LOW_WATER_ROWS
    } else {
        WATER_ROWS
    }
}

fn render_image(role: Role, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sky, water): ([i32; 3], [i32; 3]) = if role.is_day() {
        ([196, 208, 228], [42, 64, 74])
    } else {
        ([28, 30, 40], [12, 14, 18])
    };
    let first_water = HEIGHT - water_rows(role);
    RgbImage::from_fn(WIDTH, HEIGHT, |_, y| {
        let base = if y >= first_water { water } else { sky };
        let shade: i32 = rng.random_range(-8..=8);
        Rgb(base.map(|c| (c + shade).clamp(0, 255) as u8))
    })
}

fn render_mask(role: Role) -> GrayImage {
    let first_water = HEIGHT - water_rows(role);
    GrayImage::from_fn(WIDTH, HEIGHT, |_, y| {
        let water = y >= first_water;
        let marked = if role == Role::SegFail { !water } else { water };
        Luma([if marked { 255 } else { 0 }])
    })
}

fn write_jpeg(img: &RgbImage, path: &Path) -> Result<(), FixtureError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    JpegEncoder::new_with_quality(BufWriter::new(file), JPEG_QUALITY)
        .encode_image(img)
        .map_err(|e| FixtureError::Encode {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

fn write_png(img: &GrayImage, path: &Path) -> Result<(), FixtureError> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| FixtureError::Encode {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

fn id(p: Parameter, u: Unit) -> ParameterId {
    ParameterId::new(p, u).expect("fixture ids are catalogued")
}

/// Designed values for the `m`-th matched image.
///
/// Turbidity FNU on every row with 5 negatives; NTU on every third row.
/// CDOM ppb on even rows, negative on every tenth; RFU on every fifth.
/// Chlorophylls 650-700nm unless `m % 5 == 0`; RFU on every fourth row.
/// Chlorophyll-a never measured. Phycocyanin ug/L and RFU tie at 15 rows.
/// Sediments mg/L (regression) on every sixth row, the first being 0.0;
/// tons/day on every ninth.
fn matched_values(sample: &mut ParameterSample, m: usize) {
    let x = m as f64;
    let mut set = |p: Parameter, u: Unit, v: f64| {
        sample.set(id(p, u), Some(v)).expect("valid slot");
    };
    set(
        Parameter::Turbidity,
        Unit::Fnu,
        if m % 18 == 0 { -1.0 } else { 5.0 + 0.5 * x },
    );
    if m % 3 == 0 {
        set(Parameter::Turbidity, Unit::Ntu, 4.0 + 0.5 * x);
    }
    if m % 2 == 0 {
        set(
            Parameter::Cdom,
            Unit::PpbQse,
            if m % 10 == 0 { -0.5 } else { 20.0 + x },
        );
    }
    if m % 5 == 0 {
        set(Parameter::Cdom, Unit::Rfu, 3.0 + 0.1 * x);
    }
    if m % 5 != 0 {
        set(Parameter::Chlorophylls, Unit::UgL650To700Nm, 1.5 + 0.25 * x);
    }
    if m % 4 == 0 {
        set(Parameter::Chlorophylls, Unit::Rfu, 0.5 + 0.01 * x);
    }
    if m % 6 == 0 {
        set(Parameter::Phycocyanin, Unit::UgL, 0.2 + 0.01 * x);
        set(Parameter::SuspendedSediments, Unit::MgLRegression, 2.0 * x);
    }
    if m % 6 == 3 {
        set(Parameter::Phycocyanin, Unit::Rfu, 0.1 + 0.01 * x);
    }
    if m % 9 == 0 {
        set(Parameter::SuspendedSediments, Unit::TonsPerDay, 100.0 + x);
    }
}

/// Offset of the parameter row from the image, chosen so that the matched
/// tolerance boundary (exactly 60 minutes) and just beyond it both occur.
fn sample_offset(role: Role, unmatched_so_far: usize) -> TimeDelta {
    match role {
        Role::Matched { ordinal: 1 } => TimeDelta::minutes(-60),
        Role::Unmatched if unmatched_so_far % 2 == 0 => TimeDelta::minutes(61),
        Role::Unmatched => TimeDelta::hours(-3),
        _ => TimeDelta::minutes(7),
    }
}

/// Write the corpus under `root` (sites.csv, images/, masks/) and return
/// the endpoint content to serve.
pub fn write_fixture(root: &Path) -> Result<Fixture, FixtureError> {
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    for d in [&images_dir, &masks_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let sites: Vec<SiteDescriptor> = SITES
        .iter()
        .map(|s| SiteDescriptor {
            site_code: s.code.to_string(),
            site_name: s.name.replace('_', " "),
            state: s.state.to_string(),
            latitude: s.lat,
            longitude: s.lon,
            portal_name: s.name.to_string(),
            zone: Some(s.zone.name().to_string()),
        })
        .collect();
    let sites_csv = root.join("sites.csv");
    write_sites_csv(&sites, &sites_csv)?;

    let sep = TimeSeparator::Dash;
    let mut per_site: Vec<Vec<FixtureImage>> = vec![Vec::new(); SITES.len()];
    let mut rows: Vec<ParameterSample> = Vec::new();
    let (mut matched, mut unmatched) = (0, 0);
    for i in 0..IMAGE_COUNT {
        let (s, day) = (i % SITES.len(), i / SITES.len());
        let spec = &SITES[s];
        let role = Role::of(i, matched);
        let captured = capture_time(spec, day, i, role);
        let file_name = format_image_filename(spec.name, captured, sep);
        let stem = file_name.trim_end_matches(crate::ingest::IMAGE_EXTENSION);
        write_jpeg(&render_image(role, SEED ^ i as u64), &images_dir.join(&file_name))?;
        write_png(&render_mask(role), &masks_dir.join(format!("{stem}.png")))?;

        let site = &sites[s];
        let at = captured + sample_offset(role, unmatched);
        let mut sample = ParameterSample::new(&site.site_code, &site.site_name, at);
        match role {
            Role::Matched { ordinal } => {
                matched_values(&mut sample, ordinal);
                matched += 1;
            }
            Role::Unmatched => {
                unmatched += 1;
                sample.set(id(Parameter::Turbidity, Unit::Fnu), Some(9.0))?;
            }
            _ => {
                sample.set(id(Parameter::Turbidity, Unit::Fnu), Some(1000.0 + i as f64))?;
            }
        }
        rows.push(sample);
        per_site[s].push(FixtureImage {
            catalog_path: format!("{}/{file_name}", spec.name),
            file_name,
            site_code: spec.code.to_string(),
            captured_utc: captured,
            role,
        });
    }
    rows.sort_by(|a, b| (&a.site_code, a.timestamp).cmp(&(&b.site_code, b.timestamp)));

    // One superseded row: same key as the third matched row, listed first.
    let third = rows
        .iter()
        .position(|r| r.values()[id(Parameter::Turbidity, Unit::Fnu).slot()] == Some(6.0))
        .expect("third matched row present");
    let mut stale = rows[third].clone();
    stale.set(id(Parameter::Turbidity, Unit::Fnu), Some(999.0))?;
    let mut export_rows = rows.clone();
    export_rows.insert(third, stale);

    let mut catalogs = BTreeMap::new();
    for (spec, imgs) in SITES.iter().zip(&per_site) {
        let mut paths: Vec<String> = imgs.iter().map(|im| im.catalog_path.clone()).collect();
        paths.push(format!("{}/Thumbs.db", spec.name));
        catalogs.insert(spec.name.to_string(), paths);
    }
    let range = TimeRange::new(
        Utc.with_ymd_and_hms(2024, 5, 1, 0, 0, 0).unwrap(),
        Utc.with_ymd_and_hms(2024, 7, 1, 0, 0, 0).unwrap(),
    )?;
    Ok(Fixture {
        root: root.to_path_buf(),
        sites_csv,
        images_dir,
        masks_dir,
        sites,
        images: per_site.into_iter().flatten().collect(),
        samples: rows,
        duplicate_rows: 1,
        malformed_entries: SITES.len(),
        range,
        data: MockData {
            catalogs,
            parameters_tsv: parameter_export_tsv(&export_rows),
            time_separator: sep,
        },
    })
}
