//! Curation toolkit for surface-water imagery paired with optically active
//! water-quality measurements.
//!
//! The pipeline stages map onto modules:
//!
//! * [`ingest`] fetches image catalogs and parameter series and owns the
//!   record types and their CSV forms.
//! * [`solar`] converts capture instants to site-local time and classifies
//!   each image as day or night from sunrise/sunset geometry.
//! * [`segval`] builds Gaussian-mixture surrogate water masks, scores
//!   candidate masks against them and applies the quality gates.
//! * [`align`] joins images to the nearest parameter measurement and emits
//!   the per-parameter labeled datasets.
//! * [`metrics`] is the regression evaluation suite.
//! * [`hpo`] holds the Bayesian optimizer and the training-control policies.
//! * [`orchestrate`] drives external trainers over a line-delimited JSON
//!   protocol.
//! * [`pipeline`] and [`report`] tie the stages together.

pub mod align;
pub mod fixture;
pub mod hpo;
pub mod ingest;
pub mod metrics;
pub mod mock;
pub mod numeric;
pub mod orchestrate;
pub mod pipeline;
pub mod report;
pub mod score;
pub mod segval;
pub mod solar;

pub use score::Score;
