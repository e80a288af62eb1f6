use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offstreet_sim::{LotRateTable, RatePair};
use crate::stats::median;

/// Hourly lot record: entries in that hour and the time each vehicle paid for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotEventRecord {
    pub lot_id: String,
    /// Start of the hour.
    pub hour: NaiveDateTime,
    pub entries: u32,
    pub paid_durations_s: Vec<f64>,
}

pub fn hour_floor(t: NaiveDateTime) -> NaiveDateTime {
    t.date().and_hms_opt(t.hour(), 0, 0).expect("valid time")
}

/// Naive departures: every paid duration leaves at `hour(entry + duration)`.
/// Returns per-lot counts keyed by hour.
pub fn derive_departures(
    events: &[LotEventRecord],
) -> Result<BTreeMap<String, BTreeMap<NaiveDateTime, f64>>> {
    let mut out: BTreeMap<String, BTreeMap<NaiveDateTime, f64>> = BTreeMap::new();
    for ev in events {
        if ev.paid_durations_s.len() > ev.entries as usize {
            return Err(Error::InvalidInput(format!(
                "lot `{}` at {}: {} durations for {} entries",
                ev.lot_id,
                ev.hour,
                ev.paid_durations_s.len(),
                ev.entries
            )));
        }
        let lot = out.entry(ev.lot_id.clone()).or_default();
        for &d in &ev.paid_durations_s {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "lot `{}` at {}: invalid paid duration {d}",
                    ev.lot_id, ev.hour
                )));
            }
            let leave = hour_floor(ev.hour) + Duration::milliseconds((d * 1000.0).round() as i64);
            *lot.entry(hour_floor(leave)).or_insert(0.0) += 1.0;
        }
    }
    Ok(out)
}

/// Contiguous hourly counts starting at `start` (an hour boundary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySeries {
    pub start: NaiveDateTime,
    pub counts: Vec<f64>,
}

impl HourlySeries {
    /// Densifies a sparse map over `hours` hours from `start`; absent hours are 0.
    pub fn from_map(
        map: &BTreeMap<NaiveDateTime, f64>,
        start: NaiveDateTime,
        hours: usize,
    ) -> Self {
        let counts = (0..hours)
            .map(|h| {
                map.get(&(start + Duration::hours(h as i64)))
                    .copied()
                    .unwrap_or(0.0)
            })
            .collect();
        HourlySeries { start, counts }
    }

    pub fn time_at(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::hours(i as i64)
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingConfig {
    /// Hours of day at which rate boundaries create departure spikes.
    pub peak_hours: Vec<u32>,
    pub sigma_h: f64,
    pub span_h: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            peak_hours: vec![18],
            sigma_h: 3.5,
            span_h: 12,
        }
    }
}

/// Left-half-Gaussian weights for offsets 1..=span before a peak, summing to 1.
pub(crate) fn left_half_gaussian_weights(sigma: f64, span: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=span)
        .map(|j| (-(j as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Spreads each configured peak's excess over the preceding `span_h` hours.
///
/// The excess at a peak is its count minus the median of the hours within
/// ±3 (peak excluded); it is removed from the peak and added to hours
/// `p-1 .. p-span` with left-half-Gaussian weights. Totals are preserved.
pub fn smooth_departures(series: &HourlySeries, cfg: &SmoothingConfig) -> Result<HourlySeries> {
    if !(cfg.sigma_h.is_finite() && cfg.sigma_h > 0.0) || cfg.span_h == 0 {
        return Err(Error::Config(
            "smoothing needs sigma > 0 and span >= 1".into(),
        ));
    }
    let weights = left_half_gaussian_weights(cfg.sigma_h, cfg.span_h);
    let mut counts = series.counts.clone();
    for p in 0..counts.len() {
        if !cfg.peak_hours.contains(&series.time_at(p).hour()) {
            continue;
        }
        if p < cfg.span_h {
            return Err(Error::InsufficientData(format!(
                "series starting {} is too short before the peak at {}",
                series.start,
                series.time_at(p)
            )));
        }
        let lo = p.saturating_sub(3);
        let hi = (p + 3).min(counts.len() - 1);
        let neighbors: Vec<f64> = (lo..=hi).filter(|&i| i != p).map(|i| counts[i]).collect();
        let Some(baseline) = median(&neighbors) else {
            continue;
        };
        let excess = (counts[p] - baseline).max(0.0);
        if excess == 0.0 {
            continue;
        }
        counts[p] -= excess;
        for (j, w) in weights.iter().enumerate() {
            counts[p - 1 - j] += excess * w;
        }
    }
    Ok(HourlySeries {
        start: series.start,
        counts,
    })
}

/// Mean entries and departures per (day of week, hour) over `weeks` whole
/// weeks starting at `start`. Every hour must have an entries record;
/// departures default to 0.
pub fn estimate_rates(
    lot_id: &str,
    entries: &BTreeMap<NaiveDateTime, f64>,
    departures: &HourlySeries,
    start: NaiveDateTime,
    weeks: usize,
    table: &mut LotRateTable,
) -> Result<()> {
    if weeks == 0 {
        return Err(Error::InsufficientData(
            "rate estimation needs at least one week".into(),
        ));
    }
    let hours = weeks * 7 * 24;
    let mut gaps = Vec::new();
    let mut sum_a = [[0.0; 24]; 7];
    let mut sum_d = [[0.0; 24]; 7];
    for h in 0..hours {
        let t = start + Duration::hours(h as i64);
        let dow = t.weekday().num_days_from_monday() as usize;
        let hod = t.hour() as usize;
        match entries.get(&t) {
            Some(&n) => sum_a[dow][hod] += n,
            None => gaps.push(t.format("%Y-%m-%dT%H:%M").to_string()),
        }
        let offset = (t - departures.start).num_hours();
        if offset >= 0 {
            sum_d[dow][hod] += departures
                .counts
                .get(offset as usize)
                .copied()
                .unwrap_or(0.0);
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Gaps {
            what: format!("entries of lot `{lot_id}`"),
            gaps,
        });
    }
    let w = weeks as f64;
    for dow in 0..7 {
        for hod in 0..24 {
            table.insert(
                lot_id,
                dow as u8,
                hod as u8,
                RatePair {
                    lambda_a: sum_a[dow][hod] / w,
                    lambda_d: sum_d[dow][hod] / w,
                },
            )?;
        }
    }
    Ok(())
}
