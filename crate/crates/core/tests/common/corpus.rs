//! The synthetic corpus served by a local mock endpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::TimeDelta;
use hydrocurate_core::fixture::{write_fixture, Fixture, FixtureImage, Role};
use hydrocurate_core::ingest::{ParameterId, ParameterSample};
use hydrocurate_core::mock::MockServer;
use hydrocurate_core::pipeline::PipelineConfig;

pub struct Corpus {
    pub fixture: Fixture,
    pub server: MockServer,
}

impl Corpus {
    pub fn new(root: &Path) -> Corpus {
        let fixture = write_fixture(&root.join("fixture")).unwrap();
        let server = MockServer::start(fixture.data.clone()).unwrap();
        Corpus { fixture, server }
    }

    pub fn config(&self, out_dir: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.out_dir = out_dir.to_path_buf();
        cfg.endpoints.images = self.server.images_url();
        cfg.endpoints.params = self.server.params_url();
        cfg.ingest.sites = self.fixture.sites_csv.clone();
        cfg.ingest.start = self.fixture.range.start;
        cfg.ingest.end = self.fixture.range.end;
        cfg.ingest.page_size = 16;
        cfg.ingest.max_attempts = 2;
        cfg.ingest.initial_backoff_ms = 1;
        cfg.ingest.max_backoff_ms = 1;
        cfg.segval.images_dir = self.fixture.images_dir.clone();
        cfg.segval.masks_dir = self.fixture.masks_dir.clone();
        cfg
    }
}

/// Every file under `dir` keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn count(images: &[FixtureImage], f: impl Fn(Role) -> bool) -> usize {
    images.iter().filter(|im| f(im.role)).count()
}

/// Nearest sample of the same site within 60 minutes, earlier on ties,
/// found by scanning every sample.
pub fn brute_match<'a>(im: &FixtureImage, samples: &'a [ParameterSample]) -> Option<&'a ParameterSample> {
    let tol = TimeDelta::minutes(60);
    samples
        .iter()
        .filter(|s| s.site_code == im.site_code && (s.timestamp - im.captured_utc).abs() <= tol)
        .min_by_key(|s| ((s.timestamp - im.captured_utc).abs(), s.timestamp))
}

/// Rows per parameter slug: unit with most non-null merged values (first
/// listed on ties), then non-negative values only.
pub fn oracle_rows(images: &[FixtureImage], samples: &[ParameterSample]) -> BTreeMap<String, usize> {
    let matched: Vec<&ParameterSample> = images
        .iter()
        .filter(|im| im.role.passes_coverage())
        .filter_map(|im| brute_match(im, samples))
        .collect();
    let mut best: BTreeMap<String, (usize, ParameterId)> = BTreeMap::new();
    for id in ParameterId::ALL {
        let n = matched.iter().filter(|s| s.get(id).is_some()).count();
        let slug = id.name().slug().to_string();
        if n > 0 && best.get(&slug).is_none_or(|(m, _)| n > *m) {
            best.insert(slug, (n, id));
        }
    }
    best.into_iter()
        .map(|(slug, (_, id))| {
            let rows = matched.iter().filter(|s| s.get(id).is_some_and(|v| v >= 0.0)).count();
            (slug, rows)
        })
        .collect()
}
