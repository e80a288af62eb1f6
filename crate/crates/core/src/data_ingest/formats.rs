//! Readers and writers for the on-disk formats.
//!
//! | file | format |
//! |------|--------|
//! | graph | JSON `{nodes: [{id, lat, lon}], edges: [{id, from, to, length_m, meter_count, walk_time_s, drive_time_s}]}` |
//! | payments | CSV `block_id,start_iso8601,duration_s` |
//! | surveys | CSV `meter_id,block_id,timestamp_iso8601,free_spots` |
//! | lots | JSON list of `{id, node, capacity}` |
//! | rates | CSV `lot_id,day_of_week,hour,lambda_a_per_hour,lambda_d_per_hour` |
//! | lot events | CSV `lot_id,hour_iso8601,entries,paid_durations_s` (durations `;`-separated) |
//! | samples | CSV `block_id,time_iso8601,available` |
//! | probabilities | CSV `block_id,hour,p_available` |
//!
//! Timestamps are local wall-clock times without offset, written as
//! `YYYY-MM-DDTHH:MM:SS`.

use std::path::Path;

use chrono::NaiveDateTime;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::lots::LotEventRecord;
use super::surveys::SurveyRecord;
use crate::error::{Error, Result};
use crate::occupancy_model::{OccupancySample, PaymentRecord};
use crate::offstreet_sim::{LotRateTable, LotSpec, RatePair};
use crate::pipeline::io::write_atomic;
use crate::road_graph::RoadGraph;

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Parses an ISO 8601 local timestamp. Accepts `T` or a space as the
/// separator, optional fractional seconds, optional seconds and a trailing `Z`.
pub fn parse_ts(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    Err(Error::parse("timestamp", format!("cannot parse `{s}`")))
}

pub fn format_ts(t: NaiveDateTime) -> String {
    t.format(TS_FORMAT).to_string()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads every row of a headed CSV file.
pub fn read_csv<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        // Header is line 1.
        rows.push(row.map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 2), e))?);
    }
    Ok(rows)
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::parse("csv output", e))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::parse("csv output", e.error()))
}

/// Writes rows with a header derived from `T`'s field names.
///
/// An empty slice produces an empty file.
pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_atomic(path.as_ref(), &csv_bytes(rows)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path.display().to_string(), e))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::parse("json output", e))?;
    text.push('\n');
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn write_graph(path: impl AsRef<Path>, g: &RoadGraph) -> Result<()> {
    write_json(path, &g.to_file_format())
}

#[derive(Serialize, Deserialize)]
struct PaymentRow {
    block_id: String,
    start_iso8601: String,
    duration_s: f64,
}

pub fn read_payments(path: impl AsRef<Path>) -> Result<Vec<PaymentRecord>> {
    let path = path.as_ref();
    read_csv::<PaymentRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if !(r.duration_s.is_finite() && r.duration_s > 0.0) {
                return Err(Error::parse(
                    format!("{} line {}", path.display(), i + 2),
                    format!("duration {} is not positive", r.duration_s),
                ));
            }
            Ok(PaymentRecord {
                block_id: r.block_id,
                start: parse_ts(&r.start_iso8601)?,
                duration_s: r.duration_s,
            })
        })
        .collect()
}

pub fn write_payments(path: impl AsRef<Path>, payments: &[PaymentRecord]) -> Result<()> {
    let rows: Vec<PaymentRow> = payments
        .iter()
        .map(|p| PaymentRow {
            block_id: p.block_id.clone(),
            start_iso8601: format_ts(p.start),
            duration_s: p.duration_s,
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize, Deserialize)]
struct SurveyRow {
    meter_id: String,
    block_id: String,
    timestamp_iso8601: String,
    free_spots: u32,
}

pub fn read_surveys(path: impl AsRef<Path>) -> Result<Vec<SurveyRecord>> {
    read_csv::<SurveyRow>(path)?
        .into_iter()
        .map(|r| {
            let timestamp = if r.timestamp_iso8601.trim().is_empty() {
                None
            } else {
                Some(parse_ts(&r.timestamp_iso8601)?)
            };
            Ok(SurveyRecord {
                meter_id: r.meter_id,
                block_id: r.block_id,
                timestamp,
                free: r.free_spots > 0,
            })
        })
        .collect()
}

pub fn write_surveys(path: impl AsRef<Path>, surveys: &[SurveyRecord]) -> Result<()> {
    let rows: Vec<SurveyRow> = surveys
        .iter()
        .map(|s| SurveyRow {
            meter_id: s.meter_id.clone(),
            block_id: s.block_id.clone(),
            timestamp_iso8601: s.timestamp.map(format_ts).unwrap_or_default(),
            free_spots: u32::from(s.free),
        })
        .collect();
    write_csv(path, &rows)
}

pub fn read_lots(path: impl AsRef<Path>) -> Result<Vec<LotSpec>> {
    read_json(path.as_ref())
}

pub fn write_lots(path: impl AsRef<Path>, lots: &[LotSpec]) -> Result<()> {
    write_json(path, lots)
}

#[derive(Serialize, Deserialize)]
struct RateRow {
    lot_id: String,
    day_of_week: u8,
    hour: u8,
    lambda_a_per_hour: f64,
    lambda_d_per_hour: f64,
}

pub fn read_rates(path: impl AsRef<Path>) -> Result<LotRateTable> {
    let mut table = LotRateTable::default();
    for r in read_csv::<RateRow>(path)? {
        table.insert(
            &r.lot_id,
            r.day_of_week,
            r.hour,
            RatePair {
                lambda_a: r.lambda_a_per_hour,
                lambda_d: r.lambda_d_per_hour,
            },
        )?;
    }
    Ok(table)
}

pub fn write_rates(path: impl AsRef<Path>, table: &LotRateTable) -> Result<()> {
    let rows: Vec<RateRow> = table
        .rates
        .iter()
        .map(|((lot, day, hour), r)| RateRow {
            lot_id: lot.clone(),
            day_of_week: *day,
            hour: *hour,
            lambda_a_per_hour: r.lambda_a,
            lambda_d_per_hour: r.lambda_d,
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize, Deserialize)]
struct LotEventRow {
    lot_id: String,
    hour_iso8601: String,
    entries: u32,
    paid_durations_s: String,
}

pub fn read_lot_events(path: impl AsRef<Path>) -> Result<Vec<LotEventRecord>> {
    let path = path.as_ref();
    read_csv::<LotEventRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let paid_durations_s = r
                .paid_durations_s
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|e| {
                        Error::parse(
                            format!("{} line {}", path.display(), i + 2),
                            format!("duration `{s}`: {e}"),
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LotEventRecord {
                lot_id: r.lot_id,
                hour: parse_ts(&r.hour_iso8601)?,
                entries: r.entries,
                paid_durations_s,
            })
        })
        .collect()
}

pub fn write_lot_events(path: impl AsRef<Path>, events: &[LotEventRecord]) -> Result<()> {
    let rows: Vec<LotEventRow> = events
        .iter()
        .map(|e| LotEventRow {
            lot_id: e.lot_id.clone(),
            hour_iso8601: format_ts(e.hour),
            entries: e.entries,
            paid_durations_s: e
                .paid_durations_s
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    block_id: String,
    time_iso8601: String,
    available: u8,
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<OccupancySample>> {
    let path = path.as_ref();
    read_csv::<SampleRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let available = match r.available {
                0 => false,
                1 => true,
                v => {
                    return Err(Error::parse(
                        format!("{} line {}", path.display(), i + 2),
                        format!("label {v} is not 0 or 1"),
                    ))
                }
            };
            Ok(OccupancySample {
                block_id: r.block_id,
                time: parse_ts(&r.time_iso8601)?,
                available,
            })
        })
        .collect()
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[OccupancySample]) -> Result<()> {
    let rows: Vec<SampleRow> = samples
        .iter()
        .map(|s| SampleRow {
            block_id: s.block_id.clone(),
            time_iso8601: format_ts(s.time),
            available: u8::from(s.available),
        })
        .collect();
    write_csv(path, &rows)
}

/// Predicted availability of one block at one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub block_id: String,
    pub hour: u32,
    pub p_available: f64,
}
