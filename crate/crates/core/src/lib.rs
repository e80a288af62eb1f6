//! Per-block, per-hour estimates of the time it takes to park on-street
//! (cruise, park, walk back) versus off-street (drive to a lot, queue and
//! park, walk back).
//!
//! The crate is organised as a pipeline of independent stages:
//!
//! - [`road_graph`]: the city as a directed graph of intersections and block
//!   faces, with midpoint-to-midpoint drive/walk shortest paths.
//! - [`occupancy_model`]: a small feed-forward network (and a logistic
//!   baseline) predicting block availability from partial payment data.
//! - [`onstreet_sim`]: Monte Carlo cruising simulation driven by the
//!   predicted availabilities.
//! - [`offstreet_sim`]: Poisson arrival/departure simulation of a
//!   one-dimensional lot plus the drive and walk legs.
//! - [`data_ingest`]: file formats, survey combining, departure smoothing,
//!   rate estimation and a synthetic city generator.
//! - [`pipeline`]: run configuration, stage wiring and GeoJSON export.

pub mod data_ingest;
pub mod error;
pub mod occupancy_model;
pub mod offstreet_sim;
pub mod onstreet_sim;
pub mod pipeline;
pub mod road_graph;
pub mod seed;
pub mod stats;
pub mod travel_cache;

pub use error::{Error, ErrorKind, Result};
pub use occupancy_model::{
    EvalReport, FeatureVector, Network, OccupancySample, PaymentRecord, TrainConfig,
};
pub use offstreet_sim::{LotRateTable, LotSimConfig, LotSpec, LotState};
pub use onstreet_sim::{OnstreetConfig, PolicyWeights, SearchOutcome};
pub use pipeline::{RunConfig, TimeEstimate};
pub use road_graph::{BlockFace, EdgeIdx, Intersection, NodeIdx, RoadGraph, TravelTimeTable};
