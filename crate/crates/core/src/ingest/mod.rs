//! Catalog and parameter ingestion.

mod client;
mod csvio;
mod filename;
mod types;

use std::path::PathBuf;

use thiserror::Error;

pub use client::{
    fetch_catalogs, fetch_image_catalog, fetch_parameter_series, parse_parameter_export,
    resume_image_catalog, CatalogFetch, CatalogQuery, CatalogStats, CatalogStream, HttpSource,
    ParameterFetch, ResumeToken, RetryPolicy, TimeRange,
};
pub use csvio::{
    check_header, format_timestamp, parameter_columns, parse_timestamp, read_catalog,
    read_catalog_csv, read_parameters_csv, read_sites_csv, write_catalog, write_catalog_csv,
    write_parameters, write_parameters_csv, write_sites_csv, CATALOG_COLUMNS, SITE_COLUMNS,
};
pub use filename::{format_image_filename, parse_image_filename, TimeSeparator, IMAGE_EXTENSION};
pub use types::{
    DayNight, ImageRecord, Parameter, ParameterId, ParameterSample, SiteDescriptor, Unit,
    SLOT_COUNT,
};

/// Environment variable overriding the configured image catalog endpoint.
pub const ENV_ENDPOINT_IMAGES: &str = "HYDRO_ENDPOINT_IMAGES";
/// Environment variable overriding the configured parameter endpoint.
pub const ENV_ENDPOINT_PARAMS: &str = "HYDRO_ENDPOINT_PARAMS";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed image filename {filename:?}: {reason}")]
    MalformedFilename { filename: String, reason: String },
    #[error("endpoint unavailable after {attempts} attempt(s): {detail}")]
    EndpointUnavailable { attempts: u32, detail: String },
    #[error("malformed response at offset {offset}: {detail}")]
    MalformedResponse { offset: usize, detail: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid site registry: {0}")]
    InvalidSite(String),
    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch in {}: {detail}", path.display())]
    SchemaMismatch {
        path: PathBuf,
        missing: Vec<String>,
        extra: Vec<String>,
        detail: String,
    },
    #[error("invalid record in {} line {line}: {detail}", path.display())]
    InvalidRecord {
        path: PathBuf,
        line: u64,
        detail: String,
    },
}

impl IngestError {
    /// True for failures of the remote endpoint rather than of local data.
    pub fn is_endpoint_error(&self) -> bool {
        matches!(
            self,
            IngestError::EndpointUnavailable { .. } | IngestError::MalformedResponse { .. }
        )
    }
}
