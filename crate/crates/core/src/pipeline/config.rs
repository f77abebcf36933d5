use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::align::{MergeConfig, MergeDirection};
use crate::orchestrate::Architecture;
use crate::hpo::TrainingPreset;
use crate::ingest::{
    Parameter, ParameterId, Unit, RetryPolicy, TimeRange, TimeSeparator, ENV_ENDPOINT_IMAGES, ENV_ENDPOINT_PARAMS,
};
use crate::segval::{
    GmmConfig, PixelFeature, SegGates, SegvalConfig, WaterComponent, DEFAULT_MIN_COVERAGE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub images: String,
    pub params: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            images: "http://127.0.0.1:8080/images".into(),
            params: "http://127.0.0.1:8080/params".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub sites: PathBuf,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub parameters: Vec<ParameterId>,
    pub page_size: usize,
    pub parallelism: usize,
    pub time_separator: TimeSeparator,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub backoff_multiplier: f64,
    pub timeout_secs: u64,
}

impl Default for IngestSettings {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        Self {
            sites: PathBuf::from("sites.csv"),
            start: DateTime::parse_from_rfc3339("2018-01-01T00:00:00Z")
                .expect("valid literal")
                .to_utc(),
            end: DateTime::parse_from_rfc3339("2024-11-14T00:00:00Z")
                .expect("valid literal")
                .to_utc(),
            parameters: ParameterId::ALL.to_vec(),
            page_size: 1000,
            parallelism: 4,
            time_separator: TimeSeparator::Dash,
            max_attempts: retry.max_attempts,
            initial_backoff_ms: retry.initial_backoff.as_millis() as u64,
            max_backoff_ms: retry.max_backoff.as_millis() as u64,
            backoff_multiplier: retry.multiplier,
            timeout_secs: 30,
        }
    }
}

impl IngestSettings {
    pub fn range(&self) -> Result<TimeRange, PipelineError> {
        TimeRange::new(self.start, self.end).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            initial_backoff: Duration::from_millis(self.initial_backoff_ms),
            max_backoff: Duration::from_millis(self.max_backoff_ms),
            multiplier: self.backoff_multiplier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegvalSettings {
    pub images_dir: PathBuf,
    pub masks_dir: PathBuf,
    /// Candidate masks are `<image stem>.<mask_extension>`.
    pub mask_extension: String,
    pub min_coverage: f64,
    pub feature: PixelFeature,
    pub water_component: WaterComponent,
    pub gmm: GmmConfig,
    pub gates: SegGates,
}

impl Default for SegvalSettings {
    fn default() -> Self {
        Self {
            images_dir: PathBuf::from("images"),
            masks_dir: PathBuf::from("masks"),
            mask_extension: "png".into(),
            min_coverage: DEFAULT_MIN_COVERAGE,
            feature: PixelFeature::default(),
            water_component: WaterComponent::default(),
            gmm: GmmConfig::default(),
            gates: SegGates::default(),
        }
    }
}

impl SegvalSettings {
    pub fn evaluation(&self) -> SegvalConfig {
        SegvalConfig {
            gmm: self.gmm,
            feature: self.feature,
            water_component: self.water_component,
            gates: self.gates,
            min_coverage: self.min_coverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSettings {
    pub tolerance_minutes: f64,
    pub direction: MergeDirection,
    pub split_fraction: f64,
    pub split_seed: u64,
}

impl Default for AlignSettings {
    fn default() -> Self {
        Self {
            tolerance_minutes: 60.0,
            direction: MergeDirection::Nearest,
            split_fraction: 0.8,
            split_seed: 7,
        }
    }
}

impl AlignSettings {
    pub fn merge(&self) -> MergeConfig {
        MergeConfig {
            tolerance: TimeDelta::milliseconds((self.tolerance_minutes * 60_000.0).round() as i64),
            direction: self.direction,
        }
    }
}

/// Hyperparameter search against an external trainer, one study per
/// `(parameter, architecture)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    /// Trainer argv; `{trial_id}`, `{seed}`, `{parameter}` and
    /// `{architecture}` are substituted per trial.
    pub trainer: Vec<String>,
    pub working_dir: Option<PathBuf>,
    pub parameters: Vec<ParameterId>,
    pub architectures: Vec<Architecture>,
    /// One of `standard`, `turbidity`, `turbidity-cnn`, `turbidity-vit`.
    pub preset: String,
    pub budget: usize,
    pub seed: u64,
    pub epoch_timeout_secs: u64,
    /// Search-space file; the built-in space when absent.
    pub space: Option<PathBuf>,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            trainer: Vec::new(),
            working_dir: None,
            parameters: vec![ParameterId::new(Parameter::Turbidity, Unit::Fnu).expect("catalogued")],
            architectures: Architecture::ALL.to_vec(),
            preset: "standard".into(),
            budget: 20,
            seed: 7,
            epoch_timeout_secs: 1800,
            space: None,
        }
    }
}

/// Settings for every pipeline stage. Relative paths resolve against the
/// directory of the file the config was loaded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub endpoints: Endpoints,
    pub ingest: IngestSettings,
    pub segval: SegvalSettings,
    pub align: AlignSettings,
    pub study: StudySettings,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("artifacts"),
            endpoints: Endpoints::default(),
            ingest: IngestSettings::default(),
            segval: SegvalSettings::default(),
            align: AlignSettings::default(),
            study: StudySettings::default(),
            base_dir: None,
        }
    }
}

fn in_unit(name: &str, v: f64) -> Result<(), PipelineError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(PipelineError::Config(format!("{name} = {v} must lie in [0, 1]")))
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Read a config file and apply environment overrides; call
    /// [`Self::validate`] before running stages.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    /// Override endpoints from `HYDRO_ENDPOINT_IMAGES` / `HYDRO_ENDPOINT_PARAMS`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(v) = lookup(ENV_ENDPOINT_IMAGES).filter(|v| !v.is_empty()) {
            self.endpoints.images = v;
        }
        if let Some(v) = lookup(ENV_ENDPOINT_PARAMS).filter(|v| !v.is_empty()) {
            self.endpoints.params = v;
        }
    }

    /// Replace every seed with `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.segval.gmm.seed = seed;
        self.align.split_seed = seed;
        self.study.seed = seed;
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn sites_path(&self) -> PathBuf {
        self.resolve(&self.ingest.sites)
    }

    pub fn out_path(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// [`Self::validate_settings`] plus existence of the site registry.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validate_settings()?;
        let sites = self.sites_path();
        if !sites.is_file() {
            return Err(PipelineError::MissingSiteRegistry(sites));
        }
        Ok(())
    }

    /// Range checks that do not touch the filesystem.
    pub fn validate_settings(&self) -> Result<(), PipelineError> {
        let ing = &self.ingest;
        ing.range()?;
        if ing.parameters.is_empty() {
            return Err(PipelineError::Config("ingest.parameters is empty".into()));
        }
        if ing.parameters.iter().collect::<BTreeSet<_>>().len() != ing.parameters.len() {
            return Err(PipelineError::Config("ingest.parameters lists a column twice".into()));
        }
        if ing.page_size == 0 || ing.parallelism == 0 || ing.max_attempts == 0 {
            return Err(PipelineError::Config(
                "ingest.page_size, parallelism and max_attempts must be positive".into(),
            ));
        }
        if !(ing.backoff_multiplier >= 1.0 && ing.backoff_multiplier.is_finite()) {
            return Err(PipelineError::Config("ingest.backoff_multiplier must be >= 1".into()));
        }
        let s = &self.segval;
        in_unit("segval.min_coverage", s.min_coverage)?;
        in_unit("segval.gates.iou", s.gates.iou)?;
        in_unit("segval.gates.dice", s.gates.dice)?;
        in_unit("segval.gates.precision", s.gates.precision)?;
        in_unit("segval.gates.recall", s.gates.recall)?;
        if s.gmm.k < 2 || s.gmm.max_iter == 0 || !(s.gmm.tol > 0.0) {
            return Err(PipelineError::Config(
                "segval.gmm needs k >= 2, max_iter >= 1 and tol > 0".into(),
            ));
        }
        if s.mask_extension.is_empty() || s.mask_extension.contains(['/', '.']) {
            return Err(PipelineError::Config(format!(
                "segval.mask_extension {:?} is not a bare extension",
                s.mask_extension
            )));
        }
        let a = &self.align;
        let st = &self.study;
        if [s.gmm.seed, a.split_seed, st.seed].iter().any(|v| *v > i64::MAX as u64) {
            return Err(PipelineError::Config("seeds must not exceed 2^63 - 1".into()));
        }
        if !(a.tolerance_minutes >= 0.0 && a.tolerance_minutes.is_finite()) {
            return Err(PipelineError::Config("align.tolerance_minutes must be >= 0".into()));
        }
        if !(a.split_fraction > 0.0 && a.split_fraction <= 1.0) {
            return Err(PipelineError::Config(format!(
                "align.split_fraction = {} must lie in (0, 1]",
                a.split_fraction
            )));
        }
        if TrainingPreset::by_name(&st.preset).is_none() {
            return Err(PipelineError::Config(format!("study.preset {:?} is unknown", st.preset)));
        }
        if st.budget == 0 {
            return Err(PipelineError::Config("study.budget must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = PipelineConfig::from_toml_str("[align]\ntolerance_minutes = 30.0\n").unwrap();
        assert_eq!(cfg.align.tolerance_minutes, 30.0);
        assert_eq!(cfg.align.split_fraction, 0.8);
        assert_eq!(cfg.segval.min_coverage, 0.20);
        assert_eq!(cfg.segval.gates, SegGates::default());
        assert_eq!(cfg.ingest.parameters.len(), 16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml_str("[align]\ntolerance = 30.0\n").is_err());
    }

    #[test]
    fn env_overrides_endpoints() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_env(|k| (k == ENV_ENDPOINT_PARAMS).then(|| "http://h/p".to_string()));
        assert_eq!(cfg.endpoints.params, "http://h/p");
        assert_eq!(cfg.endpoints.images, Endpoints::default().images);
    }

    #[test]
    fn missing_registry_names_the_path() {
        let mut cfg = PipelineConfig::default();
        cfg.ingest.sites = PathBuf::from("/nonexistent/registry.csv");
        match cfg.validate() {
            Err(e @ PipelineError::MissingSiteRegistry(_)) => {
                assert!(e.to_string().contains("/nonexistent/registry.csv"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_threshold_is_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.segval.min_coverage = 1.5;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }

    proptest! {
        #[test]
        fn toml_round_trip_is_lossless(
            cov in 0.0f64..=1.0,
            tol in 0.0f64..1e4,
            frac in 1e-3f64..=1.0,
            seed in 0..=i64::MAX as u64,
            k in 2usize..6,
            subset in proptest::sample::subsequence(ParameterId::ALL.to_vec(), 1..=16),
            colon in any::<bool>(),
        ) {
            let mut cfg = PipelineConfig::default();
            cfg.segval.min_coverage = cov;
            cfg.segval.gmm.k = k;
            cfg.segval.gmm.seed = seed;
            cfg.align.tolerance_minutes = tol;
            cfg.align.split_fraction = frac;
            cfg.align.direction = MergeDirection::Backward;
            cfg.ingest.parameters = subset.clone();
            cfg.study.parameters = subset;
            cfg.study.trainer = vec!["python".into(), "train.py".into(), "{trial_id}".into()];
            cfg.study.space = Some(PathBuf::from("space.toml"));
            if colon {
                cfg.ingest.time_separator = TimeSeparator::Colon;
            }
            let back = PipelineConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
