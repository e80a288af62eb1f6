//! Raw input handling: file formats, survey combining, lot departure
//! derivation and smoothing, Poisson rate estimation, and a synthetic city
//! generator producing the same file formats.

pub mod formats;
mod lots;
mod surveys;
pub mod synth;

pub use lots::{
    derive_departures, estimate_rates, hour_floor, smooth_departures, HourlySeries, LotEventRecord,
    SmoothingConfig,
};
pub use surveys::{combine_surveys, CombinedSurveys, SurveyRecord};
pub use synth::{synth_generate, GroundTruth, SynthBundle, SynthConfig};
