use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, Utc};
use serde::{Deserialize, Serialize};

use super::IngestError;

/// A monitoring location as listed in the site registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDescriptor {
    pub site_code: String,
    pub site_name: String,
    /// Two-letter region code.
    pub state: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Name the imagery portal uses for this site.
    pub portal_name: String,
    /// Optional IANA zone override; resolved from state/coordinates when absent.
    #[serde(default, deserialize_with = "empty_as_none")]
    pub zone: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let v = Option::<String>::deserialize(d)?;
    Ok(v.filter(|s| !s.trim().is_empty()))
}

impl SiteDescriptor {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.site_code.trim().is_empty() {
            return Err(IngestError::InvalidSite("empty site_code".into()));
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(IngestError::InvalidSite(format!(
                "site {}: latitude {} outside [-90, 90]",
                self.site_code, self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(IngestError::InvalidSite(format!(
                "site {}: longitude {} outside [-180, 180]",
                self.site_code, self.longitude
            )));
        }
        Ok(())
    }
}

/// Day/night label of a single image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DayNight {
    Day,
    Night,
    #[default]
    Unclassified,
}

impl DayNight {
    pub fn as_str(self) -> &'static str {
        match self {
            DayNight::Day => "Day",
            DayNight::Night => "Night",
            DayNight::Unclassified => "Unclassified",
        }
    }
}

impl fmt::Display for DayNight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DayNight {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Day" => Ok(DayNight::Day),
            "Night" => Ok(DayNight::Night),
            "Unclassified" | "" => Ok(DayNight::Unclassified),
            other => Err(format!("unknown day/night label {other:?}")),
        }
    }
}

/// One monitored image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Opaque storage path.
    pub path: String,
    pub site_code: String,
    pub site_name: String,
    pub state: String,
    pub captured_utc: DateTime<Utc>,
    /// Site-local capture time, filled in by day/night classification.
    pub local_time: Option<DateTime<FixedOffset>>,
    pub day_night: DayNight,
    /// Candidate-mask water coverage in `[0, 1]`, filled in by segmentation validation.
    pub water_fraction: Option<f64>,
}

impl ImageRecord {
    pub fn new(
        path: impl Into<String>,
        site: &SiteDescriptor,
        captured_utc: DateTime<Utc>,
    ) -> Self {
        Self {
            path: path.into(),
            site_code: site.site_code.clone(),
            site_name: site.site_name.clone(),
            state: site.state.clone(),
            captured_utc,
            local_time: None,
            day_night: DayNight::Unclassified,
            water_fraction: None,
        }
    }

    /// File name component of the storage path.
    pub fn file_name(&self) -> &str {
        self.path.rsplit(['/', '\\']).next().unwrap_or(&self.path)
    }
}

/// The six optically active parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    ChlorophyllA,
    Chlorophylls,
    Cdom,
    Phycocyanin,
    SuspendedSediments,
    Turbidity,
}

impl Parameter {
    pub const ALL: [Parameter; 6] = [
        Parameter::ChlorophyllA,
        Parameter::Chlorophylls,
        Parameter::Cdom,
        Parameter::Phycocyanin,
        Parameter::SuspendedSediments,
        Parameter::Turbidity,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Parameter::ChlorophyllA => "chlorophyll_a",
            Parameter::Chlorophylls => "chlorophylls",
            Parameter::Cdom => "cdom",
            Parameter::Phycocyanin => "phycocyanin",
            Parameter::SuspendedSediments => "suspended_sediments",
            Parameter::Turbidity => "turbidity",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Parameter::ChlorophyllA => "Chlorophyll-a",
            Parameter::Chlorophylls => "Chlorophylls",
            Parameter::Cdom => "CDOM",
            Parameter::Phycocyanin => "Phycocyanin",
            Parameter::SuspendedSediments => "Suspended Sediments",
            Parameter::Turbidity => "Turbidity",
        }
    }

    /// Measurement units for this parameter, in catalog listing order.
    pub fn units(self) -> &'static [Unit] {
        match self {
            Parameter::ChlorophyllA => &[Unit::UgL, Unit::Rfu],
            Parameter::Chlorophylls => &[Unit::UgL650To700Nm, Unit::UgL470To685Nm, Unit::Rfu],
            Parameter::Cdom => &[Unit::PpbQse, Unit::Rfu],
            Parameter::Phycocyanin => &[Unit::UgL, Unit::Rfu],
            Parameter::SuspendedSediments => {
                &[Unit::TonsPerDay, Unit::MgLRegression, Unit::MgLFixedPoint]
            }
            Parameter::Turbidity => &[Unit::Fnu, Unit::Fbu, Unit::Sbu, Unit::Ntu],
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.slug() == s)
    }
}

impl fmt::Display for Parameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

/// Measurement units. Which units are valid depends on the parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    /// micrograms per liter
    UgL,
    /// micrograms per liter, 650-700 nm
    UgL650To700Nm,
    /// micrograms per liter, 470-685 nm
    UgL470To685Nm,
    /// relative fluorescence units
    Rfu,
    /// parts per billion quinine sulfate equivalents
    PpbQse,
    TonsPerDay,
    /// milligrams per liter, estimated by regression
    MgLRegression,
    /// milligrams per liter, fixed point in stream
    MgLFixedPoint,
    Fnu,
    Fbu,
    Sbu,
    Ntu,
}

impl Unit {
    pub fn slug(self) -> &'static str {
        match self {
            Unit::UgL => "ug_l",
            Unit::UgL650To700Nm => "ug_l_650_700nm",
            Unit::UgL470To685Nm => "ug_l_470_685nm",
            Unit::Rfu => "rfu",
            Unit::PpbQse => "ppb_qse",
            Unit::TonsPerDay => "tons_day",
            Unit::MgLRegression => "mg_l_regression",
            Unit::MgLFixedPoint => "mg_l_fixed_point",
            Unit::Fnu => "fnu",
            Unit::Fbu => "fbu",
            Unit::Sbu => "sbu",
            Unit::Ntu => "ntu",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Unit::UgL => "µg/L",
            Unit::UgL650To700Nm => "µg/L (650-700 nm)",
            Unit::UgL470To685Nm => "µg/L (470-685 nm)",
            Unit::Rfu => "RFU",
            Unit::PpbQse => "ppb QSE",
            Unit::TonsPerDay => "tons/day",
            Unit::MgLRegression => "mg/L (regression)",
            Unit::MgLFixedPoint => "mg/L (fixed point)",
            Unit::Fnu => "FNU",
            Unit::Fbu => "FBU",
            Unit::Sbu => "SBU",
            Unit::Ntu => "NTU",
        }
    }
}

/// A (parameter, unit) measurement slot. Only the sixteen catalogued
/// combinations can be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParameterId {
    name: Parameter,
    unit: Unit,
}

pub const SLOT_COUNT: usize = 16;

impl ParameterId {
    /// All slots, grouped by parameter, units in listing order.
    pub const ALL: [ParameterId; SLOT_COUNT] = [
        ParameterId { name: Parameter::ChlorophyllA, unit: Unit::UgL },
        ParameterId { name: Parameter::ChlorophyllA, unit: Unit::Rfu },
        ParameterId { name: Parameter::Chlorophylls, unit: Unit::UgL650To700Nm },
        ParameterId { name: Parameter::Chlorophylls, unit: Unit::UgL470To685Nm },
        ParameterId { name: Parameter::Chlorophylls, unit: Unit::Rfu },
        ParameterId { name: Parameter::Cdom, unit: Unit::PpbQse },
        ParameterId { name: Parameter::Cdom, unit: Unit::Rfu },
        ParameterId { name: Parameter::Phycocyanin, unit: Unit::UgL },
        ParameterId { name: Parameter::Phycocyanin, unit: Unit::Rfu },
        ParameterId { name: Parameter::SuspendedSediments, unit: Unit::TonsPerDay },
        ParameterId { name: Parameter::SuspendedSediments, unit: Unit::MgLRegression },
        ParameterId { name: Parameter::SuspendedSediments, unit: Unit::MgLFixedPoint },
        ParameterId { name: Parameter::Turbidity, unit: Unit::Fnu },
        ParameterId { name: Parameter::Turbidity, unit: Unit::Fbu },
        ParameterId { name: Parameter::Turbidity, unit: Unit::Sbu },
        ParameterId { name: Parameter::Turbidity, unit: Unit::Ntu },
    ];

    pub fn new(name: Parameter, unit: Unit) -> Result<Self, IngestError> {
        if name.units().contains(&unit) {
            Ok(Self { name, unit })
        } else {
            Err(IngestError::InvalidParameter(format!(
                "{} is not measured in {}",
                name.display_name(),
                unit.label()
            )))
        }
    }

    pub fn name(self) -> Parameter {
        self.name
    }

    pub fn unit(self) -> Unit {
        self.unit
    }

    /// Position in [`ParameterId::ALL`].
    pub fn slot(self) -> usize {
        Self::ALL
            .iter()
            .position(|p| *p == self)
            .expect("constructed ids are always catalogued")
    }

    /// Column name, `<param>_<unit>`.
    pub fn column(self) -> String {
        format!("{}_{}", self.name.slug(), self.unit.slug())
    }

    pub fn from_column(column: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.column() == column)
    }
}

impl fmt::Display for ParameterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.name.slug(), self.unit.slug())
    }
}

impl Serialize for ParameterId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.column())
    }
}

impl<'de> Deserialize<'de> for ParameterId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ParameterId::from_column(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown parameter column {s:?}")))
    }
}

impl FromStr for ParameterId {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParameterId::from_column(s)
            .ok_or_else(|| IngestError::InvalidParameter(format!("unknown parameter column {s:?}")))
    }
}

/// One timestamped row of measurements for a site.
///
/// Absent measurements are `None`; a stored value is always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSample {
    pub site_code: String,
    pub site_name: String,
    pub timestamp: DateTime<Utc>,
    values: [Option<f64>; SLOT_COUNT],
}

impl ParameterSample {
    pub fn new(
        site_code: impl Into<String>,
        site_name: impl Into<String>,
        timestamp: DateTime<Utc>,
    ) -> Self {
        Self {
            site_code: site_code.into(),
            site_name: site_name.into(),
            timestamp,
            values: [None; SLOT_COUNT],
        }
    }

    pub fn get(&self, id: ParameterId) -> Option<f64> {
        self.values[id.slot()]
    }

    /// Store a measurement. Non-finite values are rejected.
    pub fn set(&mut self, id: ParameterId, value: Option<f64>) -> Result<(), IngestError> {
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(IngestError::InvalidParameter(format!(
                    "non-finite value {v} for {id}"
                )));
            }
        }
        self.values[id.slot()] = value;
        Ok(())
    }

    pub fn values(&self) -> &[Option<f64>; SLOT_COUNT] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_unique_slots() {
        let cols: std::collections::BTreeSet<_> =
            ParameterId::ALL.iter().map(|p| p.column()).collect();
        assert_eq!(cols.len(), 16);
        let per_param: usize = Parameter::ALL.iter().map(|p| p.units().len()).sum();
        assert_eq!(per_param, 16);
        for (i, id) in ParameterId::ALL.iter().enumerate() {
            assert_eq!(id.slot(), i);
            assert_eq!(ParameterId::from_column(&id.column()), Some(*id));
        }
    }

    #[test]
    fn rejects_uncatalogued_units() {
        assert!(ParameterId::new(Parameter::Turbidity, Unit::Rfu).is_err());
        assert!(ParameterId::new(Parameter::Cdom, Unit::PpbQse).is_ok());
    }

    #[test]
    fn nulls_are_not_zero() {
        let id = ParameterId::new(Parameter::Turbidity, Unit::Fnu).unwrap();
        let mut s = ParameterSample::new("1", "a", Utc::now());
        assert_eq!(s.get(id), None);
        s.set(id, Some(0.0)).unwrap();
        assert_eq!(s.get(id), Some(0.0));
        assert!(s.set(id, Some(f64::NAN)).is_err());
        assert!(s.set(id, Some(f64::INFINITY)).is_err());
        assert_eq!(s.get(id), Some(0.0));
    }

    #[test]
    fn site_validation() {
        let mut site = SiteDescriptor {
            site_code: "06770500".into(),
            site_name: "Platte River".into(),
            state: "NE".into(),
            latitude: 40.68,
            longitude: -98.5,
            portal_name: "Platte_River".into(),
            zone: None,
        };
        assert!(site.validate().is_ok());
        site.latitude = 91.0;
        assert!(site.validate().is_err());
        site.latitude = 0.0;
        site.site_code = " ".into();
        assert!(site.validate().is_err());
    }
}
