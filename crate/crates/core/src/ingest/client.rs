//! Paged catalog and parameter-export clients.
//!
//! Endpoint shapes:
//!
//! * Image catalog: `GET <endpoint>?site=<portal_name>&start=<iso>&end=<iso>&offset=<n>&limit=<n>`
//!   answering `{"total": <n>, "offset": <n>, "items": [{"path": "..."}]}` with
//!   items ordered by capture time. The capture time comes from the file name.
//! * Parameter export: `GET <endpoint>?sites=<a,b>&params=<col,col>&start=<iso>&end=<iso>`
//!   answering tab-separated text, `#` comment lines allowed, with a header of
//!   `site_code`, `site_name`, `timestamp_utc` and the requested slot columns.
//!   Empty cells are nulls.
//!
//! Ranges are half-open: `start <= t < end`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use log::{debug, warn};
use rayon::prelude::*;
use serde::Deserialize;

use super::csvio::{format_timestamp, parse_timestamp};
use super::filename::{parse_image_filename, TimeSeparator};
use super::types::{ImageRecord, ParameterId, ParameterSample, SiteDescriptor};
use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeRange {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, IngestError> {
        if start >= end {
            return Err(IngestError::InvalidRequest(format!(
                "range start {} is not before end {}",
                format_timestamp(start),
                format_timestamp(end)
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

/// Capped exponential backoff with a bounded number of attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for tests against local fixtures.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry.saturating_sub(1) as i32);
        let secs = self.initial_backoff.as_secs_f64() * factor;
        Duration::from_secs_f64(secs.min(self.max_backoff.as_secs_f64()))
    }
}

/// Blocking HTTP access with retry.
#[derive(Debug, Clone)]
pub struct HttpSource {
    agent: ureq::Agent,
    retry: RetryPolicy,
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}

impl HttpSource {
    pub fn new(retry: RetryPolicy, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: config.into(),
            retry,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    fn attempt(&self, url: &str, query: &[(&str, String)]) -> Result<String, Attempt> {
        let mut req = self.agent.get(url);
        for (k, v) in query {
            req = req.query(*k, v);
        }
        let mut resp = req.call().map_err(|e| match e {
            ureq::Error::BadUri(_) | ureq::Error::Http(_) => Attempt::Fatal(e.to_string()),
            other => Attempt::Retryable(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        resp.body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| Attempt::Retryable(format!("reading body: {e}")))
    }

    /// GET `url` with the query pairs, retrying transient failures.
    pub fn get_text(&self, url: &str, query: &[(&str, String)]) -> Result<String, IngestError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.attempt(url, query) {
                Ok(body) => return Ok(body),
                Err(Attempt::Fatal(detail)) => {
                    return Err(IngestError::EndpointUnavailable {
                        attempts: attempt,
                        detail: format!("{url}: {detail}"),
                    })
                }
                Err(Attempt::Retryable(detail)) => {
                    if attempt >= max {
                        return Err(IngestError::EndpointUnavailable {
                            attempts: attempt,
                            detail: format!("{url}: {detail}"),
                        });
                    }
                    let delay = self.retry.backoff(attempt);
                    warn!("{url}: {detail}; retry {attempt}/{} in {delay:?}", max - 1);
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

/// One site's catalog request.
#[derive(Debug, Clone)]
pub struct CatalogQuery {
    pub endpoint: String,
    pub site: SiteDescriptor,
    pub range: TimeRange,
    pub page_size: usize,
    pub time_separator: TimeSeparator,
}

/// Where to pick up a catalog stream after an interruption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResumeToken {
    /// Capture time of the last emitted record.
    pub after: DateTime<Utc>,
    /// Paths already emitted with exactly that capture time.
    pub emitted_at_after: BTreeSet<String>,
}

#[derive(Debug, Deserialize)]
struct CatalogPage {
    #[serde(default)]
    total: Option<usize>,
    items: Vec<CatalogItem>,
}

#[derive(Debug, Deserialize)]
struct CatalogItem {
    path: String,
}

/// Counters accumulated while streaming a catalog.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CatalogStats {
    pub pages: usize,
    pub emitted: usize,
    pub skipped_malformed: usize,
    pub skipped_out_of_range: usize,
    pub skipped_duplicate: usize,
}

/// Lazily paged stream of catalog records for one site.
///
/// Records come out in nondecreasing capture-time order, each path once.
/// After the first error the stream is exhausted; [`CatalogStream::resume_token`]
/// lets a new stream continue from the last emitted record.
pub struct CatalogStream<'a> {
    source: &'a HttpSource,
    query: CatalogQuery,
    offset: usize,
    buffer: VecDeque<ImageRecord>,
    exhausted: bool,
    last: Option<ResumeToken>,
    stats: CatalogStats,
}

impl<'a> CatalogStream<'a> {
    pub fn stats(&self) -> CatalogStats {
        self.stats
    }

    pub fn resume_token(&self) -> Option<ResumeToken> {
        self.last.clone()
    }

    fn fetch_page(&mut self) -> Result<(), IngestError> {
        let q = &self.query;
        let body = self.source.get_text(
            &q.endpoint,
            &[
                ("site", q.site.portal_name.clone()),
                ("start", format_timestamp(q.range.start)),
                ("end", format_timestamp(q.range.end)),
                ("offset", self.offset.to_string()),
                ("limit", q.page_size.to_string()),
            ],
        )?;
        let page: CatalogPage =
            serde_json::from_str(&body).map_err(|e| IngestError::MalformedResponse {
                offset: self.offset,
                detail: format!("catalog page for site {}: {e}", q.site.site_code),
            })?;
        self.stats.pages += 1;
        let page_offset = self.offset;
        let n = page.items.len();
        for (i, item) in page.items.into_iter().enumerate() {
            let name = item.path.rsplit('/').next().unwrap_or(&item.path);
            let captured = match parse_image_filename(name, q.time_separator) {
                Ok((_, ts)) => ts,
                Err(e) => {
                    warn!("site {}: skipping catalog entry: {e}", q.site.site_code);
                    self.stats.skipped_malformed += 1;
                    continue;
                }
            };
            if !q.range.contains(captured) {
                self.stats.skipped_out_of_range += 1;
                continue;
            }
            let newest = self
                .buffer
                .back()
                .map(|r| r.captured_utc)
                .or(self.last.as_ref().map(|t| t.after));
            if let Some(prev) = newest {
                if captured < prev {
                    return Err(IngestError::MalformedResponse {
                        offset: page_offset + i,
                        detail: format!(
                            "catalog for site {} is not ordered by capture time ({} after {})",
                            q.site.site_code,
                            format_timestamp(captured),
                            format_timestamp(prev)
                        ),
                    });
                }
            }
            let duplicate = self.buffer.iter().rev().take_while(|r| r.captured_utc == captured).any(|r| r.path == item.path)
                || self
                    .last
                    .as_ref()
                    .is_some_and(|t| t.after == captured && t.emitted_at_after.contains(&item.path));
            if duplicate {
                self.stats.skipped_duplicate += 1;
                continue;
            }
            self.buffer
                .push_back(ImageRecord::new(item.path, &q.site, captured));
        }
        self.offset += n;
        let reached_total = page.total.is_some_and(|t| self.offset >= t);
        if n == 0 || n < q.page_size || reached_total {
            self.exhausted = true;
        }
        debug!(
            "site {}: page at offset {page_offset} with {n} items",
            q.site.site_code
        );
        Ok(())
    }

    fn record_emitted(&mut self, rec: &ImageRecord) {
        match &mut self.last {
            Some(t) if t.after == rec.captured_utc => {
                t.emitted_at_after.insert(rec.path.clone());
            }
            _ => {
                self.last = Some(ResumeToken {
                    after: rec.captured_utc,
                    emitted_at_after: BTreeSet::from([rec.path.clone()]),
                })
            }
        }
        self.stats.emitted += 1;
    }
}

impl Iterator for CatalogStream<'_> {
    type Item = Result<ImageRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(rec) = self.buffer.pop_front() {
                self.record_emitted(&rec);
                return Some(Ok(rec));
            }
            if self.exhausted {
                return None;
            }
            if let Err(e) = self.fetch_page() {
                self.exhausted = true;
                self.buffer.clear();
                return Some(Err(e));
            }
        }
    }
}

/// Stream every catalog entry of `query.site` within `query.range`.
pub fn fetch_image_catalog(
    source: &HttpSource,
    query: CatalogQuery,
) -> Result<CatalogStream<'_>, IngestError> {
    resume_image_catalog(source, query, None)
}

/// Like [`fetch_image_catalog`], continuing after `token` when given.
pub fn resume_image_catalog(
    source: &HttpSource,
    mut query: CatalogQuery,
    token: Option<ResumeToken>,
) -> Result<CatalogStream<'_>, IngestError> {
    if query.page_size == 0 {
        return Err(IngestError::InvalidRequest("page_size must be positive".into()));
    }
    TimeRange::new(query.range.start, query.range.end)?;
    if let Some(t) = &token {
        query.range.start = t.after;
    }
    Ok(CatalogStream {
        source,
        query,
        offset: 0,
        buffer: VecDeque::new(),
        exhausted: false,
        last: token,
        stats: CatalogStats::default(),
    })
}

/// Catalog of several sites fetched with bounded parallelism.
#[derive(Debug, Clone, Default)]
pub struct CatalogFetch {
    /// Grouped by site in request order, each site's records in capture order.
    pub records: Vec<ImageRecord>,
    pub stats: CatalogStats,
}

pub fn fetch_catalogs(
    source: &HttpSource,
    endpoint: &str,
    sites: &[SiteDescriptor],
    range: TimeRange,
    page_size: usize,
    time_separator: TimeSeparator,
    parallelism: usize,
) -> Result<CatalogFetch, IngestError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| IngestError::InvalidRequest(format!("thread pool: {e}")))?;
    let per_site: Vec<Result<(Vec<ImageRecord>, CatalogStats), IngestError>> = pool.install(|| {
        sites
            .par_iter()
            .map(|site| {
                let mut stream = fetch_image_catalog(
                    source,
                    CatalogQuery {
                        endpoint: endpoint.to_string(),
                        site: site.clone(),
                        range,
                        page_size,
                        time_separator,
                    },
                )?;
                let records = stream.by_ref().collect::<Result<Vec<_>, _>>()?;
                Ok((records, stream.stats()))
            })
            .collect()
    });
    let mut out = CatalogFetch::default();
    for r in per_site {
        let (records, stats) = r?;
        out.records.extend(records);
        out.stats.pages += stats.pages;
        out.stats.emitted += stats.emitted;
        out.stats.skipped_malformed += stats.skipped_malformed;
        out.stats.skipped_out_of_range += stats.skipped_out_of_range;
        out.stats.skipped_duplicate += stats.skipped_duplicate;
    }
    Ok(out)
}

/// Parameter rows plus the number of duplicate `(site, timestamp)` rows
/// that were overwritten (last write wins).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterFetch {
    /// Sorted by `(site_code, timestamp)`.
    pub samples: Vec<ParameterSample>,
    pub duplicate_rows: usize,
}

/// Parse a tab-separated parameter export body.
pub fn parse_parameter_export(
    body: &str,
    params: &[ParameterId],
    range: Option<TimeRange>,
) -> Result<ParameterFetch, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .flexible(false)
        .from_reader(body.as_bytes());
    let malformed = |row: usize, detail: String| IngestError::MalformedResponse { offset: row, detail };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(0, format!("parameter export header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (site_col, name_col, ts_col) = match (col("site_code"), col("site_name"), col("timestamp_utc")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(malformed(
                0,
                format!("parameter export header lacks key columns: [{}]", header.join(", ")),
            ))
        }
    };
    let mut slot_cols = Vec::with_capacity(params.len());
    for p in params {
        let c = col(&p.column())
            .ok_or_else(|| malformed(0, format!("parameter export lacks requested column {p}")))?;
        slot_cols.push((*p, c));
    }
    let mut rows: BTreeMap<(String, DateTime<Utc>), ParameterSample> = BTreeMap::new();
    let mut duplicates = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| malformed(row, format!("parameter export row: {e}")))?;
        let ts = parse_timestamp(&rec[ts_col]).map_err(|e| malformed(row, e))?;
        if range.is_some_and(|r| !r.contains(ts)) {
            continue;
        }
        let mut sample = ParameterSample::new(rec[site_col].trim(), rec[name_col].trim(), ts);
        for (p, c) in &slot_cols {
            let cell = rec[*c].trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|e| malformed(row, format!("{p} value {cell:?}: {e}")))?;
            sample
                .set(*p, Some(v))
                .map_err(|e| malformed(row, e.to_string()))?;
        }
        let key = (sample.site_code.clone(), ts);
        if rows.insert(key, sample).is_some() {
            duplicates += 1;
            warn!(
                "duplicate parameter row for site {} at {}; keeping the later row",
                &rec[site_col],
                format_timestamp(ts)
            );
        }
    }
    Ok(ParameterFetch {
        samples: rows.into_values().collect(),
        duplicate_rows: duplicates,
    })
}

/// Fetch the parameter series for `sites`, keeping only requested slots.
pub fn fetch_parameter_series(
    source: &HttpSource,
    endpoint: &str,
    sites: &[String],
    params: &[ParameterId],
    range: TimeRange,
) -> Result<ParameterFetch, IngestError> {
    if sites.is_empty() || params.is_empty() {
        return Err(IngestError::InvalidRequest(
            "parameter fetch needs at least one site and one parameter".into(),
        ));
    }
    let body = source.get_text(
        endpoint,
        &[
            ("sites", sites.join(",")),
            (
                "params",
                params.iter().map(|p| p.column()).collect::<Vec<_>>().join(","),
            ),
            ("start", format_timestamp(range.start)),
            ("end", format_timestamp(range.end)),
        ],
    )?;
    let mut fetch = parse_parameter_export(&body, params, Some(range))?;
    fetch.samples.retain(|s| sites.contains(&s.site_code));
    Ok(fetch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::types::{Parameter, Unit};

    #[test]
    fn backoff_is_capped_exponential() {
        let p = RetryPolicy {
            max_attempts: 6,
            initial_backoff: Duration::from_millis(100),
            max_backoff: Duration::from_millis(500),
            multiplier: 2.0,
        };
        let delays: Vec<_> = (1..=5).map(|r| p.backoff(r).as_millis()).collect();
        assert_eq!(delays, vec![100, 200, 400, 500, 500]);
    }

    #[test]
    fn export_preserves_nulls_and_resolves_duplicates() {
        let fnu = ParameterId::new(Parameter::Turbidity, Unit::Fnu).unwrap();
        let cdom = ParameterId::new(Parameter::Cdom, Unit::PpbQse).unwrap();
        let body = "# comment\n\
site_code\tsite_name\ttimestamp_utc\tturbidity_fnu\tcdom_ppb_qse\n\
A\tSite A\t2022-06-01T14:15:00+00:00\t3.5\t\n\
A\tSite A\t2022-06-01T14:00:00Z\t\t0\n\
A\tSite A\t2022-06-01T14:15:00+00:00\t4.5\t1.0\n";
        let fetch = parse_parameter_export(body, &[fnu, cdom], None).unwrap();
        assert_eq!(fetch.duplicate_rows, 1);
        assert_eq!(fetch.samples.len(), 2);
        assert_eq!(fetch.samples[0].get(fnu), None);
        assert_eq!(fetch.samples[0].get(cdom), Some(0.0));
        assert_eq!(fetch.samples[1].get(fnu), Some(4.5));
    }

    #[test]
    fn export_rejects_non_finite_values() {
        let fnu = ParameterId::new(Parameter::Turbidity, Unit::Fnu).unwrap();
        let body = "site_code\tsite_name\ttimestamp_utc\tturbidity_fnu\n\
A\tSite A\t2022-06-01T14:15:00+00:00\tinf\n";
        let err = parse_parameter_export(body, &[fnu], None).unwrap_err();
        assert!(matches!(err, IngestError::MalformedResponse { offset: 1, .. }), "{err:?}");
    }

    #[test]
    fn empty_range_is_rejected() {
        let t = Utc::now();
        assert!(TimeRange::new(t, t).is_err());
    }
}
