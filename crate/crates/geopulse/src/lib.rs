//! Streaming location-based event detection.
//!
//! This crate wraps [`geopulse_core`] with everything that touches the
//! outside world: JSONL ingest from files and sockets, GeoJSON boundaries,
//! durable logs and checkpoints, synthetic scenarios and the `geopulse`
//! command line.

pub mod boundaries;
pub mod cli;
pub mod config;
pub mod ingest;
pub mod records;
pub mod run;
pub mod store;
pub mod synth;

pub use geopulse_core as core;
