mod common;

use std::collections::BTreeMap;
use std::fs;

use common::corpus::{count, oracle_rows, snapshot, Corpus};
use hydrocurate_core::fixture::Role;
use hydrocurate_core::ingest::read_catalog_csv;
use hydrocurate_core::pipeline::{
    run_pipeline, Funnel, Layout, PipelineError, RunOptions, Stage, DAYTIME, INGESTED, MATCHED,
    SEGMENTATION_GATE, WATER_COVERAGE,
};

#[test]
fn fixture_flows_through_every_stage_with_designed_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(tmp.path());
    let out = tmp.path().join("out");
    let report = run_pipeline(&corpus.config(&out), RunOptions::default()).unwrap();
    assert_eq!(report.ran, Stage::ALL);

    let imgs = &corpus.fixture.images;
    let expected = [
        (INGESTED, imgs.len()),
        (DAYTIME, count(imgs, Role::is_day)),
        (SEGMENTATION_GATE, count(imgs, Role::passes_segmentation)),
        (WATER_COVERAGE, count(imgs, Role::passes_coverage)),
        (MATCHED, count(imgs, Role::is_matched)),
    ];
    let got: Vec<(&str, usize)> = report.funnel.stages.iter().map(|s| (s.name.as_str(), s.after)).collect();
    assert_eq!(got, expected);
    assert_eq!(expected.map(|e| e.1), [200, 150, 120, 100, 90]);
    assert_eq!(Funnel::read(&out.join("funnel.json")).unwrap(), report.funnel);

    let layout = Layout::new(&out);
    let kept: Vec<String> = read_catalog_csv(&layout.kept()).unwrap().into_iter().map(|r| r.path).collect();
    let mut designed: Vec<String> = imgs
        .iter()
        .filter(|im| im.role.passes_coverage())
        .map(|im| im.catalog_path.clone())
        .collect();
    let mut kept_sorted = kept.clone();
    kept_sorted.sort();
    designed.sort();
    assert_eq!(kept_sorted, designed);

    let stats: serde_json::Value = serde_json::from_slice(&fs::read(layout.ingest_stats()).unwrap()).unwrap();
    assert_eq!(stats["skipped_malformed"], corpus.fixture.malformed_entries);
    assert_eq!(stats["duplicate_parameter_rows"], corpus.fixture.duplicate_rows);

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(layout.dictionary_summary()).unwrap()).unwrap();
    let rows: BTreeMap<String, usize> = summary["parameters"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| !p["unit"].is_null())
        .map(|p| (p["parameter"].as_str().unwrap().to_string(), p["rows"].as_u64().unwrap() as usize))
        .collect();
    assert_eq!(rows, oracle_rows(imgs, &corpus.fixture.samples));
    let designed_rows: BTreeMap<String, usize> = [
        ("cdom", 36),
        ("chlorophylls", 72),
        ("phycocyanin", 15),
        ("suspended_sediments", 15),
        ("turbidity", 85),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    assert_eq!(rows, designed_rows);

    for (slug, n) in &rows {
        let lines = |part: &str| fs::read_to_string(out.join(format!("dataset_{slug}{part}.csv"))).unwrap().lines().count() - 1;
        assert_eq!(lines(""), *n);
        assert_eq!(lines("_train") + lines("_val"), *n);
        assert_eq!(lines("_train"), (*n * 4).div_ceil(5));
    }
}

#[test]
fn reruns_are_byte_identical_and_resume_skips_fresh_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&corpus.config(&a), RunOptions::default()).unwrap();
    let first = snapshot(&a);
    run_pipeline(&corpus.config(&b), RunOptions::default()).unwrap();
    assert_eq!(first, snapshot(&b));
    run_pipeline(&corpus.config(&a), RunOptions::default()).unwrap();
    assert_eq!(first, snapshot(&a));

    let resume = RunOptions { resume: true };
    let r = run_pipeline(&corpus.config(&a), resume).unwrap();
    assert_eq!(r.skipped, Stage::ALL);
    assert!(r.ran.is_empty());

    fs::remove_file(a.join("kept.csv")).unwrap();
    let r = run_pipeline(&corpus.config(&a), resume).unwrap();
    assert_eq!(r.skipped, [Stage::Ingest, Stage::Daynight]);
    assert_eq!(r.ran, [Stage::Segval, Stage::Align]);
    assert_eq!(first, snapshot(&a));

    let mut wider = corpus.config(&a);
    wider.align.tolerance_minutes = 240.0;
    let r = run_pipeline(&wider, resume).unwrap();
    assert_eq!(r.ran, [Stage::Align]);
    let matched = r.funnel.stages.last().unwrap();
    assert_eq!(matched.after, 100);
}

#[test]
fn missing_site_registry_is_a_config_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(tmp.path());
    let mut cfg = corpus.config(&tmp.path().join("out"));
    cfg.ingest.sites = tmp.path().join("nowhere/sites.csv");
    let err = run_pipeline(&cfg, RunOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::MissingSiteRegistry(_)));
    assert!(err.to_string().contains("nowhere/sites.csv"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn missing_mask_names_stage_and_record() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(tmp.path());
    let victim = corpus.fixture.images.iter().find(|im| im.role.is_matched()).unwrap();
    let stem = victim.file_name.trim_end_matches(".jpg");
    fs::remove_file(corpus.fixture.masks_dir.join(format!("{stem}.png"))).unwrap();
    let err = run_pipeline(&corpus.config(&tmp.path().join("out")), RunOptions::default()).unwrap_err();
    match &err {
        PipelineError::Stage { stage, context, .. } => {
            assert_eq!(*stage, Stage::Segval);
            assert!(context.contains(&victim.catalog_path), "{context}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unreachable_endpoint_maps_to_endpoint_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = Corpus::new(tmp.path());
    let mut cfg = corpus.config(&tmp.path().join("out"));
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    cfg.endpoints.images = format!("http://127.0.0.1:{port}/images");
    let err = run_pipeline(&cfg, RunOptions::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Ingest, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}
