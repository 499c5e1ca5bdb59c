//! City management engines for smart-post telemetry.
//!
//! - [`ingest`] parses radar, pedestrian and detection feeds and splits
//!   them per post.
//! - [`safety`] aggregates windows, evaluates decision-maker rules into
//!   warning/danger violations and computes hourly speeding ratios.
//! - [`energy`] cleans movement series, fits a day-type × hour forecaster,
//!   finds zero-activity night blocks and recommends dimming.
//! - [`maintenance`] deduplicates confidence-scored detections into an
//!   issue registry with urgency bands and a lifecycle.
//! - [`service`] persists everything in an append-only log and serves it
//!   over HTTP; [`replay`] drives the engines over recorded or generated
//!   datasets.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod energy;
pub mod ingest;
pub mod maintenance;
pub mod model;
pub mod replay;
pub mod safety;
pub mod service;

pub use model::{day_type, haversine_m, validate_config, Config, DayType, GeoPoint, PostRegistry, Severity, SmartPost};
