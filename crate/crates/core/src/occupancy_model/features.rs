use std::collections::HashMap;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::road_graph::RoadGraph;

/// Window before the query time that defines a block's popularity.
pub const POPULARITY_WINDOW_S: f64 = 3.0 * 3600.0;

/// One observed meter payment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaymentRecord {
    pub block_id: String,
    pub start: NaiveDateTime,
    pub duration_s: f64,
}

/// Network input for one (block, time).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub active_sessions: f64,
    pub popularity_3h: f64,
    pub block_length_m: f64,
    pub congestion_s_per_m: f64,
}

impl FeatureVector {
    pub const LEN: usize = 4;

    pub fn to_array(self) -> [f64; 4] {
        [
            self.active_sessions,
            self.popularity_3h,
            self.block_length_m,
            self.congestion_s_per_m,
        ]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        FeatureVector {
            active_sessions: v[0],
            popularity_3h: v[1],
            block_length_m: v[2],
            congestion_s_per_m: v[3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

pub(crate) fn epoch_seconds(t: NaiveDateTime) -> f64 {
    t.and_utc().timestamp() as f64 + f64::from(t.and_utc().timestamp_subsec_nanos()) * 1e-9
}

/// Payments grouped per block and sorted by start time.
#[derive(Debug, Clone, Default)]
pub struct PaymentIndex {
    // (start, end) in epoch seconds, sorted by start
    by_block: HashMap<String, Vec<(f64, f64)>>,
}

impl PaymentIndex {
    pub fn new(payments: &[PaymentRecord]) -> Self {
        let mut by_block: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
        for p in payments {
            let start = epoch_seconds(p.start);
            by_block
                .entry(p.block_id.clone())
                .or_default()
                .push((start, start + p.duration_s));
        }
        for v in by_block.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        }
        PaymentIndex { by_block }
    }

    /// (active sessions, sessions started in the preceding 3 hours) at `t`.
    ///
    /// A session is active on the half-open interval `[start, start + duration)`.
    pub fn counts(&self, block_id: &str, t: NaiveDateTime) -> (usize, usize) {
        let Some(sessions) = self.by_block.get(block_id) else {
            return (0, 0);
        };
        let t = epoch_seconds(t);
        let started = sessions.partition_point(|s| s.0 <= t);
        let active = sessions[..started].iter().filter(|s| s.1 > t).count();
        let window_start = sessions.partition_point(|s| s.0 < t - POPULARITY_WINDOW_S);
        let before_t = sessions.partition_point(|s| s.0 < t);
        (active, before_t - window_start)
    }
}

pub fn extract_features(
    payments: &PaymentIndex,
    block_id: &str,
    t: NaiveDateTime,
    g: &RoadGraph,
) -> Result<FeatureVector> {
    let e = g.edge_index(block_id)?;
    let (active, popularity) = payments.counts(block_id, t);
    let length = g.length(e);
    let congestion = g.drive_time(e, t.hour() as usize) / length;
    let fv = FeatureVector {
        active_sessions: active as f64,
        popularity_3h: popularity as f64,
        block_length_m: length,
        congestion_s_per_m: congestion,
    };
    if !fv.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite features for block `{block_id}`"
        )));
    }
    Ok(fv)
}
