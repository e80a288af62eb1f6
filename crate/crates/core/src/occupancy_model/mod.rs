//! Block availability model: features from partial payment data, a
//! 4→30→30→2 ReLU network (plus a logistic baseline) and its training and
//! evaluation protocol.

mod features;
mod network;
mod train;

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

pub use features::{
    extract_features, FeatureVector, PaymentIndex, PaymentRecord, POPULARITY_WINDOW_S,
};
pub use network::{
    Dense, Example, FeatureNorm, Gradient, Network, NormStat, LOGISTIC_SHAPE, MLP_SHAPE,
    MODEL_FORMAT_VERSION,
};
pub use train::{
    build_examples, evaluate, fit, train, train_baseline, train_examples, EvalReport, ModelKind,
    SplitMetrics, TrainConfig, MIN_TRAINING_SAMPLES,
};

use crate::error::{Error, Result};
use crate::road_graph::RoadGraph;

/// Block-level ground truth: `available` means at least one free spot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub block_id: String,
    pub time: chrono::NaiveDateTime,
    pub available: bool,
}

/// Availability probabilities are kept strictly inside (0, 1).
const PROB_EPS: f64 = 1e-9;

/// P(spot available) for every block at `date` `hour`:30.
///
/// Unmetered blocks (`meter_count == 0`) get 0: the search simulator may
/// drive through them but can never park there.
pub fn predict_block_probabilities(
    model: &Network,
    payments: &PaymentIndex,
    g: &RoadGraph,
    hour: u32,
    date: NaiveDate,
) -> Result<BTreeMap<String, f64>> {
    let time = NaiveTime::from_hms_opt(hour, 30, 0)
        .ok_or_else(|| Error::InvalidInput(format!("hour {hour} outside 0-23")))?;
    let t = date.and_time(time);
    let mut out = BTreeMap::new();
    for e in g.edges() {
        let p = if e.meter_count == 0 {
            0.0
        } else {
            let x = extract_features(payments, &e.id, t, g)?;
            model.forward(&x)?.0.clamp(PROB_EPS, 1.0 - PROB_EPS)
        };
        out.insert(e.id.clone(), p);
    }
    Ok(out)
}
