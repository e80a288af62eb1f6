use std::collections::BTreeMap;

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::occupancy_model::OccupancySample;

/// One meter checked by a surveyor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub meter_id: String,
    pub block_id: String,
    /// Missing in part of the raw data; such checks are unusable.
    pub timestamp: Option<NaiveDateTime>,
    pub free: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinedSurveys {
    pub samples: Vec<OccupancySample>,
    pub discarded: usize,
}

/// Start of the clock half-hour containing `t`.
pub(crate) fn half_hour_floor(t: NaiveDateTime) -> NaiveDateTime {
    let minute = if t.minute() >= 30 { 30 } else { 0 };
    t.date()
        .and_hms_opt(t.hour(), minute, 0)
        .expect("valid time")
}

/// Merges meter-level checks of one block within the same clock half-hour
/// into one block sample at the window midpoint; the block is available if
/// any checked meter was free. Checks without a timestamp are discarded.
pub fn combine_surveys(records: &[SurveyRecord]) -> CombinedSurveys {
    let mut groups: BTreeMap<(String, NaiveDateTime), bool> = BTreeMap::new();
    let mut discarded = 0;
    for r in records {
        let Some(t) = r.timestamp else {
            discarded += 1;
            continue;
        };
        let any_free = groups
            .entry((r.block_id.clone(), half_hour_floor(t)))
            .or_insert(false);
        *any_free |= r.free;
    }
    let samples = groups
        .into_iter()
        .map(|((block_id, window), available)| OccupancySample {
            block_id,
            time: window + Duration::minutes(15),
            available,
        })
        .collect();
    CombinedSurveys { samples, discarded }
}
