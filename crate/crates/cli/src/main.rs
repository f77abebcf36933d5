//! `hydrocurate`: run the curation pipeline stage by stage, drive
//! hyperparameter studies and render reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 external endpoint error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{ArgAction, Parser, Subcommand};
use hydrocurate_core::align::DictionarySummary;
use hydrocurate_core::hpo::{SearchSpace, TrainingPreset};
use hydrocurate_core::ingest::ParameterId;
use hydrocurate_core::metrics::read_predictions_csv;
use hydrocurate_core::orchestrate::{
    best_cell_table, read_ledger, run_study, select_best_per_cell, Architecture, OrchestrateError,
    StudyOptions, TrainerSpec,
};
use hydrocurate_core::pipeline::{
    run_align, run_daynight, run_ingest, run_pipeline, run_segval, Layout, PipelineConfig,
    PipelineError, RunOptions,
};
use hydrocurate_core::report::{
    dictionary_table, emit_confusions, emit_funnel, evaluate_rows, evaluation_tables, Evaluation,
    ReportError,
};

#[derive(Debug, Parser)]
#[command(name = "hydrocurate", version, about = "Curate stream-camera imagery into water-quality datasets")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for clustering, the train/validation split and studies.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `out_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run ingest, daynight, segval and align in one output directory.
    Run {
        /// Skip stages whose inputs and settings are unchanged.
        #[arg(long)]
        resume: bool,
    },
    /// Fetch image catalogs and parameter series.
    Ingest,
    /// Classify catalog records by solar elevation and keep daytime ones.
    Daynight {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        sites: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score candidate masks and apply the segmentation and coverage gates.
    Segval {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        masks: Option<PathBuf>,
    },
    /// Join kept images to parameter rows and write per-parameter datasets.
    Align {
        #[arg(long)]
        kept: Option<PathBuf>,
        #[arg(long)]
        parameters: Option<PathBuf>,
    },
    /// Run one hyperparameter study per (parameter, architecture) cell.
    Study {
        /// Parameter column; repeatable.
        #[arg(long = "parameter")]
        parameters: Vec<ParameterId>,
        /// Architecture name; repeatable.
        #[arg(long = "architecture")]
        architectures: Vec<Architecture>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Score a predictions CSV per parameter and model.
    Evaluate {
        /// Columns `image_path,actual,predicted,model_tag,parameter`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = 3)]
        decimals: usize,
    },
    /// Render the funnel, confusion matrices and dataset table.
    Report {
        #[arg(long)]
        funnel: Option<PathBuf>,
        #[arg(long)]
        evaluations: Option<PathBuf>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<OrchestrateError> for Failure {
    fn from(e: OrchestrateError) -> Self {
        match e {
            OrchestrateError::Spawn { .. } | OrchestrateError::InvalidSpec(_) | OrchestrateError::Hpo(_) => {
                Self::config(e.to_string())
            }
            _ => Self::data(e.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let mut c = PipelineConfig::default();
            c.apply_env(|k| std::env::var(k).ok());
            c
        }
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = std::path::absolute(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
    }
    cfg.validate_settings()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::data(format!("{what} {} does not exist", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let layout = Layout::new(cfg.out_path());
    match &cli.command {
        Command::Run { resume } => {
            let report = run_pipeline(&cfg, RunOptions { resume: *resume })?;
            for stage in &report.skipped {
                println!("{stage}: up to date");
            }
            for s in &report.funnel.stages {
                println!("{}: {}", s.name, s.after);
            }
        }
        Command::Ingest => {
            cfg.validate()?;
            create_dir(&layout.dir)?;
            let r = run_ingest(&cfg, &layout.ingest_io(cfg.sites_path()))?;
            println!(
                "ingest: {} images from {} sites, {} parameter rows, {} malformed names",
                r.images, r.sites, r.parameter_rows, r.skipped_malformed
            );
        }
        Command::Daynight { catalog, sites, out } => {
            let sites = sites.clone().unwrap_or_else(|| cfg.sites_path());
            if !sites.is_file() {
                return Err(PipelineError::MissingSiteRegistry(sites).into());
            }
            let mut io = layout.daynight_io(sites);
            io.catalog = catalog.clone().unwrap_or(io.catalog);
            io.out = out.clone().unwrap_or(io.out);
            require_file(&io.catalog, "catalog")?;
            create_dir(&layout.dir)?;
            let (before, after) = run_daynight(&io)?;
            println!("daynight: kept {after} of {before}");
        }
        Command::Segval { catalog, images, masks } => {
            let images = images.clone().unwrap_or_else(|| cfg.resolve(&cfg.segval.images_dir));
            let masks = masks.clone().unwrap_or_else(|| cfg.resolve(&cfg.segval.masks_dir));
            let mut io = layout.segval_io(images, masks);
            io.catalog_day = catalog.clone().unwrap_or(io.catalog_day);
            require_file(&io.catalog_day, "daytime catalog")?;
            create_dir(&layout.dir)?;
            let r = run_segval(&cfg.segval, &io)?;
            println!(
                "segval: {} evaluated, {} pass the segmentation gate, {} kept",
                r.evaluated, r.segmentation_pass, r.kept
            );
        }
        Command::Align { kept, parameters } => {
            let mut io = layout.align_io();
            io.kept = kept.clone().unwrap_or(io.kept);
            io.parameters = parameters.clone().unwrap_or(io.parameters);
            require_file(&io.kept, "kept catalog")?;
            require_file(&io.parameters, "parameter table")?;
            create_dir(&layout.dir)?;
            let summary = run_align(&cfg.align, &cfg.ingest.parameters, &io)?;
            print!("{}", dictionary_table(&summary));
        }
        Command::Study {
            parameters,
            architectures,
            budget,
            preset,
        } => study(&cfg, &layout, parameters, architectures, *budget, preset.as_deref())?,
        Command::Evaluate { predictions, decimals } => {
            let rows = read_predictions_csv(predictions).map_err(|e| Failure::data(e.to_string()))?;
            let evals = evaluate_rows(&rows)?;
            create_dir(&layout.dir)?;
            let json = serde_json::to_string_pretty(&evals).expect("evaluations serialize") + "\n";
            write_text(&layout.dir.join("evaluations.json"), &json)?;
            let tables = evaluation_tables(&evals, *decimals);
            write_text(&layout.dir.join("metrics.md"), &tables)?;
            print!("{tables}");
        }
        Command::Report {
            funnel,
            evaluations,
            dictionary,
        } => report(&layout, funnel, evaluations, dictionary)?,
    }
    Ok(())
}

fn study(
    cfg: &PipelineConfig,
    layout: &Layout,
    parameters: &[ParameterId],
    architectures: &[Architecture],
    budget: Option<usize>,
    preset: Option<&str>,
) -> Result<(), Failure> {
    let st = &cfg.study;
    if st.trainer.is_empty() {
        return Err(Failure::config("study.trainer is empty"));
    }
    let preset_name = preset.unwrap_or(&st.preset);
    let preset = TrainingPreset::by_name(preset_name)
        .ok_or_else(|| Failure::config(format!("unknown preset {preset_name:?}")))?;
    let budget = budget.unwrap_or(st.budget);
    if budget == 0 {
        return Err(Failure::config("budget must be at least 1"));
    }
    let space = match &st.space {
        Some(p) => SearchSpace::load(&cfg.resolve(p)).map_err(|e| Failure::config(e.to_string()))?,
        None => SearchSpace::default(),
    };
    let parameters = if parameters.is_empty() { &st.parameters[..] } else { parameters };
    let architectures = if architectures.is_empty() { &st.architectures[..] } else { architectures };
    let dir = layout.dir.join("study");
    create_dir(&dir)?;

    let mut ledgers = Vec::new();
    let mut failed = Vec::new();
    for &parameter in parameters {
        for &architecture in architectures {
            let mut spec = TrainerSpec::new(st.trainer.clone(), architecture, parameter)?;
            spec.working_dir = st.working_dir.as_deref().map(|p| cfg.resolve(p));
            spec.max_epochs = preset.max_epochs;
            spec.epoch_timeout = Duration::from_secs(st.epoch_timeout_secs);
            spec.batch_size = preset.batch_size;
            spec.horizontal_flip = preset.horizontal_flip;
            let ledger = dir.join(format!("ledger_{}_{}.jsonl", parameter.column(), architecture.as_str().to_lowercase()));
            let opts = StudyOptions {
                budget,
                seed: st.seed,
                policies: preset.policies.clone(),
                fixed: preset.fixed,
                ledger: Some(ledger.clone()),
            };
            match run_study(&spec, &space, &opts) {
                Ok(r) => {
                    println!(
                        "{parameter} {architecture}: best {:?} (trial {}, {} resumed)",
                        r.incumbent.objective, r.incumbent.trial_id, r.resumed
                    );
                    ledgers.push(r.entries);
                }
                Err(e @ OrchestrateError::AllTrialsFailed { .. }) => {
                    log::warn!("{parameter} {architecture}: {e}");
                    ledgers.push(read_ledger(&ledger).unwrap_or_default());
                    failed.push(format!("{parameter} {architecture}"));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let table = best_cell_table(&select_best_per_cell(&ledgers), 4);
    write_text(&dir.join("best_cells.md"), &table)?;
    print!("{table}");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::data(format!("every trial failed in: {}", failed.join(", "))))
    }
}

fn report(
    layout: &Layout,
    funnel: &Option<PathBuf>,
    evaluations: &Option<PathBuf>,
    dictionary: &Option<PathBuf>,
) -> Result<(), Failure> {
    let pick = |flag: &Option<PathBuf>, default: PathBuf| -> Result<Option<PathBuf>, Failure> {
        match flag {
            Some(p) => require_file(p, "input").map(|_| Some(p.clone())),
            None => Ok(default.is_file().then_some(default)),
        }
    };
    let funnel = pick(funnel, layout.funnel())?;
    let evaluations = pick(evaluations, layout.dir.join("evaluations.json"))?;
    let dictionary = pick(dictionary, layout.dictionary_summary())?;
    if funnel.is_none() && evaluations.is_none() && dictionary.is_none() {
        return Err(Failure::data(format!("nothing to report in {}", layout.dir.display())));
    }
    create_dir(&layout.dir)?;
    let mut written = Vec::new();
    if let Some(f) = funnel {
        let (svg, md) = emit_funnel(&f, &layout.dir)?;
        written.extend([svg, md]);
    }
    if let Some(e) = evaluations {
        let evals: Vec<Evaluation> = read_json(&e)?;
        let named: Vec<_> = evals
            .into_iter()
            .map(|ev| (format!("{} {}", ev.parameter, ev.model_tag), ev.binned))
            .collect();
        written.extend(emit_confusions(&named, &layout.dir)?);
    }
    if let Some(d) = dictionary {
        let summary: DictionarySummary = read_json(&d)?;
        let path = layout.dir.join("dictionary.md");
        write_text(&path, &dictionary_table(&summary))?;
        written.push(path);
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
