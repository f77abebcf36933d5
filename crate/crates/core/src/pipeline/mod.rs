//! Stage driver: ingest → daynight → segval → align.
//!
//! Every stage reads its inputs from files, writes its artifacts and its
//! funnel entry, and can therefore be run alone. [`run_pipeline`] chains
//! them in one output directory and skips a stage on resume when its
//! marker fingerprint (stage settings plus input file bytes) is unchanged
//! and its outputs exist.

mod config;
mod funnel;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::align::{asof_merge, build_dictionary, split_train_val, DatasetRow, UnitSelection};
use crate::ingest::{
    fetch_catalogs, fetch_parameter_series, read_catalog_csv, read_parameters_csv, read_sites_csv,
    write_catalog_csv, write_parameters_csv, DayNight, HttpSource, IngestError, ParameterId,
    SLOT_COUNT,
};
use crate::segval::{evaluate_batch, summarize_metrics, SegSummary};
use crate::solar::{classify_catalog, filter_daytime};

pub use config::{
    AlignSettings, Endpoints, IngestSettings, PipelineConfig, SegvalSettings, StudySettings,
};
pub use funnel::{
    Funnel, FunnelStage, DAYTIME, INGESTED, MATCHED, SEGMENTATION_GATE, STAGE_ORDER,
    WATER_COVERAGE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Daynight,
    Segval,
    Align,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Ingest, Stage::Daynight, Stage::Segval, Stage::Align];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Daynight => "daynight",
            Stage::Segval => "segval",
            Stage::Align => "align",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error: site registry {} does not exist", .0.display())]
    MissingSiteRegistry(PathBuf),
    #[error("{stage} stage: {context}: {detail}")]
    Stage {
        stage: Stage,
        context: String,
        detail: String,
        endpoint: bool,
    },
    #[error("artifact {}: {detail}", path.display())]
    Artifact { path: PathBuf, detail: String },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Artifact {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }
    }

    fn stage(stage: Stage, context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            context: context.into(),
            detail: err.to_string(),
            endpoint: false,
        }
    }

    fn ingest(stage: Stage, context: impl Into<String>, err: IngestError) -> Self {
        PipelineError::Stage {
            stage,
            context: context.into(),
            endpoint: err.is_endpoint_error(),
            detail: err.to_string(),
        }
    }

    /// 1 configuration, 2 data, 3 external endpoint.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingSiteRegistry(_) => 1,
            PipelineError::Stage { endpoint: true, .. } => 3,
            _ => 2,
        }
    }
}

pub(crate) fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

/// Standard artifact names inside one output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn catalog(&self) -> PathBuf {
        self.dir.join("catalog.csv")
    }
    pub fn parameters(&self) -> PathBuf {
        self.dir.join("parameters.csv")
    }
    pub fn ingest_stats(&self) -> PathBuf {
        self.dir.join("ingest_stats.json")
    }
    pub fn catalog_day(&self) -> PathBuf {
        self.dir.join("catalog_day.csv")
    }
    pub fn segmetrics(&self) -> PathBuf {
        self.dir.join("segmetrics.csv")
    }
    pub fn kept(&self) -> PathBuf {
        self.dir.join("kept.csv")
    }
    pub fn segval_summary(&self) -> PathBuf {
        self.dir.join("segval_summary.json")
    }
    pub fn dictionary_summary(&self) -> PathBuf {
        self.dir.join("dictionary_summary.json")
    }
    pub fn funnel(&self) -> PathBuf {
        self.dir.join("funnel.json")
    }
    pub fn markers(&self) -> PathBuf {
        self.dir.join(".stages")
    }
    pub fn marker(&self, stage: Stage) -> PathBuf {
        self.markers().join(format!("{stage}.done"))
    }

    pub fn ingest_io(&self, sites: PathBuf) -> IngestIo {
        IngestIo {
            sites,
            catalog: self.catalog(),
            parameters: self.parameters(),
            stats: self.ingest_stats(),
            funnel: self.funnel(),
        }
    }

    pub fn daynight_io(&self, sites: PathBuf) -> DaynightIo {
        DaynightIo {
            catalog: self.catalog(),
            sites,
            out: self.catalog_day(),
            funnel: self.funnel(),
        }
    }

    pub fn segval_io(&self, images_dir: PathBuf, masks_dir: PathBuf) -> SegvalIo {
        SegvalIo {
            catalog_day: self.catalog_day(),
            images_dir,
            masks_dir,
            metrics: self.segmetrics(),
            kept: self.kept(),
            summary: self.segval_summary(),
            funnel: self.funnel(),
        }
    }

    pub fn align_io(&self) -> AlignIo {
        AlignIo {
            kept: self.kept(),
            parameters: self.parameters(),
            out_dir: self.dir.clone(),
            funnel: self.funnel(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestIo {
    pub sites: PathBuf,
    pub catalog: PathBuf,
    pub parameters: PathBuf,
    pub stats: PathBuf,
    pub funnel: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub sites: usize,
    pub pages: usize,
    pub images: usize,
    pub skipped_malformed: usize,
    pub skipped_out_of_range: usize,
    pub skipped_duplicate: usize,
    pub parameter_rows: usize,
    pub duplicate_parameter_rows: usize,
}

/// Fetch catalogs and parameter series for every registered site.
pub fn run_ingest(cfg: &PipelineConfig, io: &IngestIo) -> Result<IngestReport, PipelineError> {
    const S: Stage = Stage::Ingest;
    let ing = &cfg.ingest;
    let sites = read_sites_csv(&io.sites).map_err(|e| PipelineError::ingest(S, "site registry", e))?;
    let range = ing.range()?;
    let source = HttpSource::new(ing.retry(), Duration::from_secs(ing.timeout_secs));
    let catalog = fetch_catalogs(
        &source,
        &cfg.endpoints.images,
        &sites,
        range,
        ing.page_size,
        ing.time_separator,
        ing.parallelism,
    )
    .map_err(|e| PipelineError::ingest(S, "image catalog", e))?;
    let codes: Vec<String> = sites.iter().map(|s| s.site_code.clone()).collect();
    let params = fetch_parameter_series(&source, &cfg.endpoints.params, &codes, &ing.parameters, range)
        .map_err(|e| PipelineError::ingest(S, "parameter series", e))?;
    write_catalog_csv(&catalog.records, &io.catalog).map_err(|e| PipelineError::ingest(S, "catalog.csv", e))?;
    write_parameters_csv(&params.samples, &io.parameters)
        .map_err(|e| PipelineError::ingest(S, "parameters.csv", e))?;
    let report = IngestReport {
        sites: sites.len(),
        pages: catalog.stats.pages,
        images: catalog.records.len(),
        skipped_malformed: catalog.stats.skipped_malformed,
        skipped_out_of_range: catalog.stats.skipped_out_of_range,
        skipped_duplicate: catalog.stats.skipped_duplicate,
        parameter_rows: params.samples.len(),
        duplicate_parameter_rows: params.duplicate_rows,
    };
    write_json(&report, &io.stats)?;
    Funnel::update(&io.funnel, INGESTED, None, report.images)?;
    info!("ingest: {} images, {} parameter rows", report.images, report.parameter_rows);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct DaynightIo {
    pub catalog: PathBuf,
    pub sites: PathBuf,
    pub out: PathBuf,
    pub funnel: PathBuf,
}

/// Classify every catalog record and keep the daytime ones.
/// Returns `(before, after)`.
pub fn run_daynight(io: &DaynightIo) -> Result<(usize, usize), PipelineError> {
    const S: Stage = Stage::Daynight;
    let sites = read_sites_csv(&io.sites).map_err(|e| PipelineError::ingest(S, "site registry", e))?;
    let mut records = read_catalog_csv(&io.catalog).map_err(|e| PipelineError::ingest(S, "catalog", e))?;
    let before = records.len();
    classify_catalog(&mut records, &sites).map_err(|e| PipelineError::stage(S, "classification", e))?;
    let (kept, _) = filter_daytime(records).map_err(|e| PipelineError::stage(S, "filter", e))?;
    write_catalog_csv(&kept, &io.out).map_err(|e| PipelineError::ingest(S, "output catalog", e))?;
    Funnel::update(&io.funnel, DAYTIME, Some(before), kept.len())?;
    info!("daynight: kept {} of {before}", kept.len());
    Ok((before, kept.len()))
}

#[derive(Debug, Clone)]
pub struct SegvalIo {
    pub catalog_day: PathBuf,
    pub images_dir: PathBuf,
    pub masks_dir: PathBuf,
    pub metrics: PathBuf,
    pub kept: PathBuf,
    pub summary: PathBuf,
    pub funnel: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegvalReport {
    pub evaluated: usize,
    pub segmentation_pass: usize,
    pub kept: usize,
    /// Over every evaluated image.
    pub all: SegSummary,
    /// Over images passing the segmentation gate; absent when none do.
    pub gated: Option<SegSummary>,
}

const SEGMETRICS_COLUMNS: [&str; 16] = [
    "image_path",
    "site_code",
    "tp",
    "fp",
    "fn",
    "tn",
    "iou",
    "dice",
    "precision",
    "recall",
    "accuracy",
    "specificity",
    "water_fraction",
    "segmentation_pass",
    "coverage_pass",
    "kept",
];

/// Score every daytime image's candidate mask against its surrogate mask,
/// then apply the segmentation gate and the coverage filter.
pub fn run_segval(settings: &SegvalSettings, io: &SegvalIo) -> Result<SegvalReport, PipelineError> {
    const S: Stage = Stage::Segval;
    let mut records = read_catalog_csv(&io.catalog_day).map_err(|e| PipelineError::ingest(S, "catalog", e))?;
    if let Some(r) = records.iter().find(|r| r.day_night != DayNight::Day) {
        return Err(PipelineError::stage(
            S,
            format!("record {}", r.path),
            format!("expected a daytime record, found {}", r.day_night),
        ));
    }
    let pairs: Vec<(PathBuf, PathBuf)> = records
        .iter()
        .map(|r| {
            let name = r.file_name();
            let stem = Path::new(name).file_stem().map_or(name.into(), |s| s.to_string_lossy());
            (
                io.images_dir.join(name),
                io.masks_dir.join(format!("{stem}.{}", settings.mask_extension)),
            )
        })
        .collect();
    let cfg = settings.evaluation();
    let results = evaluate_batch(&pairs, &cfg);
    let mut evals = Vec::with_capacity(results.len());
    for (r, res) in records.iter().zip(results) {
        evals.push(res.map_err(|e| PipelineError::stage(S, format!("record {}", r.path), e))?);
    }
    if evals.is_empty() {
        return Err(PipelineError::stage(S, "catalog", "no daytime images to evaluate"));
    }

    let mut w = csv::Writer::from_path(&io.metrics).map_err(|e| PipelineError::stage(S, "segmetrics", e))?;
    let csv_err = |e: csv::Error| PipelineError::stage(S, "segmetrics", e);
    w.write_record(SEGMETRICS_COLUMNS).map_err(csv_err)?;
    for (r, ev) in records.iter().zip(&evals) {
        let m = &ev.metrics;
        let mut row = vec![
            r.path.clone(),
            r.site_code.clone(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.r#fn.to_string(),
            m.tn.to_string(),
        ];
        row.extend(m.scores().iter().map(|(_, s)| s.to_string()));
        row.push(ev.water_fraction.to_string());
        row.push(ev.seg_pass.to_string());
        row.push(ev.coverage_pass.to_string());
        row.push(ev.kept().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| PipelineError::io(&io.metrics, e))?;

    for (r, ev) in records.iter_mut().zip(&evals) {
        r.water_fraction = Some(ev.water_fraction);
    }
    let seg_pass = evals.iter().filter(|e| e.seg_pass).count();
    let kept: Vec<_> = records
        .into_iter()
        .zip(&evals)
        .filter(|(_, e)| e.kept())
        .map(|(r, _)| r)
        .collect();
    write_catalog_csv(&kept, &io.kept).map_err(|e| PipelineError::ingest(S, "kept catalog", e))?;

    let all: Vec<_> = evals.iter().map(|e| e.metrics).collect();
    let gated: Vec<_> = evals.iter().filter(|e| e.seg_pass).map(|e| e.metrics).collect();
    let report = SegvalReport {
        evaluated: evals.len(),
        segmentation_pass: seg_pass,
        kept: kept.len(),
        all: summarize_metrics(&all).map_err(|e| PipelineError::stage(S, "summary", e))?,
        gated: summarize_metrics(&gated).ok(),
    };
    write_json(&report, &io.summary)?;
    let mut funnel = Funnel::read(&io.funnel)?;
    funnel.record(SEGMENTATION_GATE, Some(report.evaluated), seg_pass);
    funnel.record(WATER_COVERAGE, Some(seg_pass), report.kept);
    funnel.write(&io.funnel)?;
    info!("segval: {} evaluated, {seg_pass} pass gates, {} kept", report.evaluated, report.kept);
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AlignIo {
    pub kept: PathBuf,
    pub parameters: PathBuf,
    pub out_dir: PathBuf,
    pub funnel: PathBuf,
}

pub fn dataset_path(dir: &Path, slug: &str, part: Option<&str>) -> PathBuf {
    match part {
        Some(p) => dir.join(format!("dataset_{slug}_{p}.csv")),
        None => dir.join(format!("dataset_{slug}.csv")),
    }
}

fn write_rows(rows: &[DatasetRow], path: &Path) -> Result<(), PipelineError> {
    crate::align::write_dataset_csv(rows, path).map_err(|e| PipelineError::Artifact {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Join kept images to their nearest parameter rows, choose units over the
/// merged rows and write one dataset (plus its train/validation split) per
/// parameter with a chosen unit.
pub fn run_align(
    settings: &AlignSettings,
    params: &[ParameterId],
    io: &AlignIo,
) -> Result<crate::align::DictionarySummary, PipelineError> {
    const S: Stage = Stage::Align;
    let mut images = read_catalog_csv(&io.kept).map_err(|e| PipelineError::ingest(S, "kept catalog", e))?;
    images.sort_by(|a, b| (&a.site_code, a.captured_utc, &a.path).cmp(&(&b.site_code, b.captured_utc, &b.path)));
    let samples = read_parameters_csv(&io.parameters).map_err(|e| PipelineError::ingest(S, "parameters", e))?;
    let merge = settings.merge();
    let merged = asof_merge(&images, &samples, params, &merge).map_err(|e| PipelineError::stage(S, "merge", e))?;
    let mut counts = [0usize; SLOT_COUNT];
    for a in &merged.aligned {
        counts[a.parameter.slot()] += 1;
    }
    let selection = UnitSelection::from_counts(&counts);
    let dict = build_dictionary(&merged, &selection, &merge);
    for (parameter, rows) in &dict.datasets {
        let slug = parameter.slug();
        write_rows(rows, &dataset_path(&io.out_dir, slug, None))?;
        let (train, val) = if rows.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            split_train_val(rows, settings.split_fraction, settings.split_seed)
                .map_err(|e| PipelineError::stage(S, format!("split {slug}"), e))?
        };
        write_rows(&train, &dataset_path(&io.out_dir, slug, Some("train")))?;
        write_rows(&val, &dataset_path(&io.out_dir, slug, Some("val")))?;
    }
    write_json(&dict.summary, &io.out_dir.join("dictionary_summary.json"))?;
    Funnel::update(&io.funnel, MATCHED, Some(images.len()), merged.stats.matched)?;
    info!("align: {} of {} images matched", merged.stats.matched, images.len());
    Ok(dict.summary)
}

/// 64-bit FNV-1a, stable across platforms and releases.
fn fnv1a(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for b in chunk.iter().copied().chain((chunk.len() as u64).to_le_bytes()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn fingerprint(stage: Stage, settings: &impl Serialize, inputs: &[PathBuf]) -> Result<String, PipelineError> {
    let settings = serde_json::to_vec(settings).expect("settings serialize");
    let mut contents = Vec::with_capacity(inputs.len());
    for p in inputs {
        contents.push(fs::read(p).map_err(|e| PipelineError::io(p, e))?);
    }
    let mut chunks: Vec<&[u8]> = vec![stage.as_str().as_bytes(), &settings];
    chunks.extend(contents.iter().map(Vec::as_slice));
    Ok(format!("{:016x}\n", fnv1a(&chunks)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Skip stages whose marker matches and whose outputs exist.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineReport {
    pub out_dir: PathBuf,
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub funnel: Funnel,
}

fn stage_inputs(stage: Stage, layout: &Layout, cfg: &PipelineConfig) -> Vec<PathBuf> {
    match stage {
        Stage::Ingest => vec![cfg.sites_path()],
        Stage::Daynight => vec![layout.catalog(), cfg.sites_path()],
        Stage::Segval => vec![layout.catalog_day()],
        Stage::Align => vec![layout.kept(), layout.parameters()],
    }
}

fn stage_outputs(stage: Stage, layout: &Layout) -> Vec<PathBuf> {
    match stage {
        Stage::Ingest => vec![layout.catalog(), layout.parameters(), layout.ingest_stats()],
        Stage::Daynight => vec![layout.catalog_day()],
        Stage::Segval => vec![layout.segmetrics(), layout.kept(), layout.segval_summary()],
        Stage::Align => vec![layout.dictionary_summary()],
    }
}

/// Settings that determine a stage's outputs. Endpoints are excluded: they
/// say where data comes from, not what it is.
fn stage_settings(stage: Stage, cfg: &PipelineConfig) -> serde_json::Value {
    let ing = &cfg.ingest;
    match stage {
        Stage::Ingest => serde_json::json!({
            "start": ing.start,
            "end": ing.end,
            "parameters": ing.parameters,
            "time_separator": ing.time_separator,
        }),
        Stage::Daynight => serde_json::Value::Null,
        Stage::Segval => serde_json::to_value(&cfg.segval).expect("settings serialize"),
        Stage::Align => serde_json::json!({ "align": cfg.align, "parameters": ing.parameters }),
    }
}

fn run_stage(stage: Stage, cfg: &PipelineConfig, layout: &Layout) -> Result<(), PipelineError> {
    match stage {
        Stage::Ingest => run_ingest(cfg, &layout.ingest_io(cfg.sites_path())).map(drop),
        Stage::Daynight => run_daynight(&layout.daynight_io(cfg.sites_path())).map(drop),
        Stage::Segval => run_segval(
            &cfg.segval,
            &layout.segval_io(cfg.resolve(&cfg.segval.images_dir), cfg.resolve(&cfg.segval.masks_dir)),
        )
        .map(drop),
        Stage::Align => run_align(&cfg.align, &cfg.ingest.parameters, &layout.align_io()).map(drop),
    }
}

/// Run every stage into `cfg.out_path()`.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    let layout = Layout::new(cfg.out_path());
    fs::create_dir_all(layout.markers()).map_err(|e| PipelineError::io(&layout.markers(), e))?;
    let mut report = PipelineReport {
        out_dir: layout.dir.clone(),
        ran: Vec::new(),
        skipped: Vec::new(),
        funnel: Funnel::default(),
    };
    let mut upstream_ran = false;
    for stage in Stage::ALL {
        let marker = layout.marker(stage);
        let inputs = stage_inputs(stage, &layout, cfg);
        let settings = stage_settings(stage, cfg);
        if opts.resume && !upstream_ran {
            let fp = fingerprint(stage, &settings, &inputs).ok();
            let current = fs::read_to_string(&marker).ok();
            let outputs_present = stage_outputs(stage, &layout).iter().all(|p| p.is_file());
            if fp.is_some() && fp == current && outputs_present {
                info!("{stage}: up to date, skipped");
                report.skipped.push(stage);
                continue;
            }
        }
        let _ = fs::remove_file(&marker);
        run_stage(stage, cfg, &layout)?;
        write_file(&marker, fingerprint(stage, &settings, &inputs)?.as_bytes())?;
        report.ran.push(stage);
        upstream_ran = true;
    }
    report.funnel = Funnel::read(&layout.funnel())?;
    Ok(report)
}

/// Dataset row counts per parameter slug from `dictionary_summary.json`.
pub fn dataset_counts(summary: &crate::align::DictionarySummary) -> BTreeMap<String, usize> {
    summary
        .parameters
        .iter()
        .filter(|p| p.unit.is_some())
        .map(|p| (p.parameter.slug().to_string(), p.rows))
        .collect()
}
