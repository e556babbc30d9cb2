//! Core of the geopulse location-based event detector.
//!
//! Everything in this crate is pure computation over owned values: message
//! validation, reverse geocoding against boundary polygons, per-place time
//! binning, the incremental Gaussian mixture regressor, two-series outlier
//! intersection, event coalescing, term ranking and scoring against ground
//! truth. It builds without `std`; only `alloc` is required. File formats,
//! network sources, persistence and the command line live in the `geopulse`
//! crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod codec;
pub mod describe;
pub mod detect;
pub mod geo;
pub mod igmn;
mod linalg;
pub mod message;
pub mod pipeline;
pub mod score;
pub mod series;
pub mod time;

pub use describe::{EventReport, StopwordList, TermRanking};
pub use detect::{DetectorConfig, EventWindow, OutlierBin};
pub use geo::{BoundaryIndex, LocatedMessage, Place};
pub use igmn::{IgmnModel, IgmnParams, Prediction};
pub use message::{Coord, GeoMessage, PlaceLevel};
pub use pipeline::{Pipeline, PipelineConfig};
pub use series::{BinObservation, PlaceSeries};
pub use time::{BinSize, Timestamp};
