//! Local HTTP server imitating the catalog and parameter-export endpoints.
//!
//! Routes: `GET /images` (paged JSON catalog) and `GET /params` (tab-separated
//! export). Faults can be queued to make chosen requests fail.

use std::collections::BTreeMap;
use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use log::debug;
use serde_json::json;
use tiny_http::{Header, Response, Server};

use crate::ingest::{format_timestamp, parse_image_filename, parse_timestamp, ParameterSample, ParameterId, TimeSeparator};

/// Served content: catalog paths per portal name (in capture order) and the
/// full parameter export.
#[derive(Debug, Clone, Default)]
pub struct MockData {
    pub catalogs: BTreeMap<String, Vec<String>>,
    pub parameters_tsv: String,
    pub time_separator: TimeSeparator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Images,
    Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Status(u16),
    /// `200 OK` with a body that does not parse.
    Garbage,
}

/// Fails the next `times` matching requests. `offset` restricts catalog
/// faults to one page.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub route: Route,
    pub offset: Option<usize>,
    pub times: u32,
    pub kind: FaultKind,
}

#[derive(Default)]
struct Shared {
    faults: Mutex<Vec<Fault>>,
    log: Mutex<Vec<String>>,
    count: AtomicUsize,
}

pub struct MockServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    base: String,
    handle: Option<JoinHandle<()>>,
}

/// Tab-separated export with all slot columns. Nulls are empty cells.
pub fn parameter_export_tsv(samples: &[ParameterSample]) -> String {
    let mut out = String::from("# parameter export\nsite_code\tsite_name\ttimestamp_utc");
    for id in ParameterId::ALL {
        out.push('\t');
        out.push_str(&id.column());
    }
    out.push('\n');
    for s in samples {
        out.push_str(&format!("{}\t{}\t{}", s.site_code, s.site_name, format_timestamp(s.timestamp)));
        for v in s.values() {
            out.push('\t');
            if let Some(v) = v {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn query_map(url: &str) -> BTreeMap<String, String> {
    url::Url::parse(&format!("http://mock{url}"))
        .map(|u| u.query_pairs().into_owned().collect())
        .unwrap_or_default()
}

impl MockServer {
    pub fn start(data: MockData) -> io::Result<Self> {
        let server = Arc::new(Server::http("127.0.0.1:0").map_err(io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("mock server has no IP address"))?;
        let shared = Arc::new(Shared::default());
        let handle = {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            std::thread::spawn(move || {
                for req in server.incoming_requests() {
                    let (status, body, content_type) = handle(&data, &shared, req.url());
                    let header = Header::from_bytes("Content-Type", content_type).expect("static header");
                    let resp = Response::from_string(body).with_status_code(status).with_header(header);
                    let _ = req.respond(resp);
                }
            })
        };
        Ok(Self {
            server,
            shared,
            base: format!("http://{addr}"),
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn images_url(&self) -> String {
        format!("{}/images", self.base)
    }

    pub fn params_url(&self) -> String {
        format!("{}/params", self.base)
    }

    pub fn inject(&self, fault: Fault) {
        self.shared.faults.lock().expect("fault lock").push(fault);
    }

    pub fn request_count(&self) -> usize {
        self.shared.count.load(Ordering::SeqCst)
    }

    /// Request URLs (path and query) in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.shared.log.lock().expect("log lock").clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn take_fault(shared: &Shared, route: Route, offset: Option<usize>) -> Option<FaultKind> {
    let mut faults = shared.faults.lock().expect("fault lock");
    let f = faults
        .iter_mut()
        .find(|f| f.route == route && f.times > 0 && (f.offset.is_none() || f.offset == offset))?;
    f.times -= 1;
    Some(f.kind)
}

fn handle(data: &MockData, shared: &Shared, url: &str) -> (u16, String, &'static str) {
    shared.count.fetch_add(1, Ordering::SeqCst);
    shared.log.lock().expect("log lock").push(url.to_string());
    debug!("mock request {url}");
    let path = url.split('?').next().unwrap_or("");
    let q = query_map(url);
    let route = match path {
        "/images" => Route::Images,
        "/params" => Route::Params,
        _ => return (404, "not found".into(), "text/plain"),
    };
    let offset = q.get("offset").and_then(|o| o.parse::<usize>().ok());
    match take_fault(shared, route, offset) {
        Some(FaultKind::Status(s)) => return (s, "injected failure".into(), "text/plain"),
        Some(FaultKind::Garbage) => return (200, "{not json\t".into(), "application/json"),
        None => {}
    }
    match route {
        Route::Images => images(data, &q),
        Route::Params => params(data, &q),
    }
}

fn images(data: &MockData, q: &BTreeMap<String, String>) -> (u16, String, &'static str) {
    let (Some(site), Some(offset), Some(limit)) = (
        q.get("site"),
        q.get("offset").and_then(|v| v.parse::<usize>().ok()),
        q.get("limit").and_then(|v| v.parse::<usize>().ok()),
    ) else {
        return (400, "site, offset and limit are required".into(), "text/plain");
    };
    let start = q.get("start").and_then(|s| parse_timestamp(s).ok());
    let end = q.get("end").and_then(|s| parse_timestamp(s).ok());
    let entries: Vec<&String> = data
        .catalogs
        .get(site)
        .map(|paths| {
            paths
                .iter()
                .filter(|p| {
                    let name = p.rsplit('/').next().unwrap_or(p);
                    match parse_image_filename(name, data.time_separator) {
                        Ok((_, t)) => start.is_none_or(|s| t >= s) && end.is_none_or(|e| t < e),
                        Err(_) => true,
                    }
                })
                .collect()
        })
        .unwrap_or_default();
    let page: Vec<_> = entries
        .iter()
        .skip(offset)
        .take(limit)
        .map(|p| json!({ "path": p }))
        .collect();
    let body = json!({ "total": entries.len(), "offset": offset, "items": page });
    (200, body.to_string(), "application/json")
}

fn params(data: &MockData, q: &BTreeMap<String, String>) -> (u16, String, &'static str) {
    let Some(sites) = q.get("sites") else {
        return (400, "sites is required".into(), "text/plain");
    };
    let wanted: Vec<&str> = sites.split(',').collect();
    let mut out = String::new();
    let mut site_col = None;
    for line in data.parameters_tsv.lines() {
        if line.starts_with('#') {
            out.push_str(line);
            out.push('\n');
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        match site_col {
            None => {
                site_col = cells.iter().position(|c| *c == "site_code");
                out.push_str(line);
                out.push('\n');
            }
            Some(c) => {
                if cells.get(c).is_some_and(|s| wanted.contains(s)) {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
    }
    (200, out, "text/tab-separated-values")
}
