//! Fixtures shared by the benchmarks.

use parksim_core::data_ingest::SmoothingConfig;
use parksim_core::data_ingest::{synth_generate, HourlySeries, SynthConfig};
use parksim_core::occupancy_model::{Example, MLP_SHAPE};
use parksim_core::seed::rng_for;
use parksim_core::{FeatureVector, Network, RoadGraph};

/// The default 10×10 synthetic grid.
pub fn grid() -> RoadGraph {
    synth_generate(&SynthConfig::default())
        .expect("default synthetic city")
        .graph
}

/// A freshly initialised network and a batch of `n` labelled examples.
pub fn network_and_batch(n: usize) -> (Network, Vec<Example>) {
    let mut rng = rng_for(1, &["bench".into()]);
    let net = Network::init(&MLP_SHAPE, 1.0, &mut rng);
    let batch = (0..n)
        .map(|i| {
            let x = i as f64;
            Example {
                features: FeatureVector::from_array([
                    x % 7.0,
                    x % 13.0,
                    100.0,
                    0.12 + (x % 5.0) * 0.01,
                ]),
                available: i % 3 != 0,
            }
        })
        .collect();
    (net, batch)
}

/// Twelve weeks of hourly departures with a spike at every 18:00.
pub fn spiky_departures() -> (HourlySeries, SmoothingConfig) {
    let start = "2024-03-04T00:00:00".parse().expect("valid timestamp");
    let counts = (0..12 * 7 * 24)
        .map(|h| if h % 24 == 18 { 90.0 } else { 10.0 })
        .collect();
    (HourlySeries { start, counts }, SmoothingConfig::default())
}
