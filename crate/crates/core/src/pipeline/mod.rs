//! Run configuration and the stage sequence
//! ingest → train → predict → sim-on → sim-off → diff.
//!
//! Every stage reads its inputs from the configured raw files or from the
//! output directory and writes its results there, so stages can be rerun
//! individually.

mod config;
mod geojson;
pub mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{parse_hours, InputPaths, RunConfig};
pub use geojson::{feature_collection, MapKind};

use crate::data_ingest::formats::{
    read_csv, read_lot_events, read_lots, read_payments, read_rates, read_samples, read_surveys,
    write_csv, write_json, write_rates, write_samples, ProbabilityRow,
};
use crate::data_ingest::{
    combine_surveys, derive_departures, estimate_rates, hour_floor, smooth_departures, HourlySeries,
};
use crate::error::{Error, ErrorKind, Result};
use crate::occupancy_model::{
    predict_block_probabilities, train, train_baseline, EvalReport, Network, PaymentIndex,
};
use crate::offstreet_sim::{self, LotRateTable, OffstreetRow};
use crate::onstreet_sim::{self, probs_by_edge, OnstreetRow};
use crate::road_graph::{load_graph, RoadGraph};
use crate::travel_cache::{populate_travel_times, CachedProvider};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const PROBABILITIES_FILE: &str = "probabilities.csv";
pub const ONSTREET_FILE: &str = "onstreet.csv";
pub const OFFSTREET_FILE: &str = "offstreet.csv";
pub const DIFF_FILE: &str = "diff.csv";
pub const MAPS_DIR: &str = "maps";

/// On-street and off-street times for one block and hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEstimate {
    pub block_id: String,
    pub hour: u32,
    pub mean_onstreet_s: f64,
    pub mean_offstreet_s: f64,
    /// Off-street minus on-street; negative where the lot is faster.
    pub delta_s: f64,
}

impl TimeEstimate {
    pub fn new(block_id: String, hour: u32, onstreet_s: f64, offstreet_s: f64) -> Self {
        TimeEstimate {
            block_id,
            hour,
            mean_onstreet_s: onstreet_s,
            mean_offstreet_s: offstreet_s,
            delta_s: offstreet_s - onstreet_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Train,
    Eval,
    Predict,
    SimOn,
    SimOff,
    Diff,
    Synth,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Predict => "predict",
            Stage::SimOn => "sim-on",
            Stage::SimOff => "sim-off",
            Stage::Diff => "diff",
            Stage::Synth => "synth",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn kind(&self) -> ErrorKind {
        self.source.kind()
    }
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

/// Loads the graph, replacing its travel times from the directions cache
/// when one is configured.
pub fn load_run_graph(cfg: &RunConfig) -> Result<RoadGraph> {
    let g = load_graph(&cfg.inputs.graph)?;
    match &cfg.directions_cache {
        None => Ok(g),
        Some(path) => {
            let mut provider = CachedProvider::offline(path)?;
            let table = populate_travel_times(&g, &mut provider)?;
            g.with_travel_times(&table)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub survey_records: usize,
    pub surveys_discarded: usize,
    pub samples: usize,
    pub available_fraction: f64,
    pub lots: usize,
    pub lot_departures_naive: f64,
}

/// Lot rates from hourly lot events: naive departures are smoothed around
/// the configured peaks and both series averaged over `weeks` whole weeks
/// starting at each lot's first recorded hour.
pub fn lot_rates_from_events(
    events: &[crate::data_ingest::LotEventRecord],
    smoothing: &crate::data_ingest::SmoothingConfig,
    weeks: usize,
) -> Result<LotRateTable> {
    let mut entries: BTreeMap<&str, BTreeMap<chrono::NaiveDateTime, f64>> = BTreeMap::new();
    for ev in events {
        *entries
            .entry(ev.lot_id.as_str())
            .or_default()
            .entry(hour_floor(ev.hour))
            .or_insert(0.0) += f64::from(ev.entries);
    }
    let departures = derive_departures(events)?;
    let mut table = LotRateTable::default();
    let empty = BTreeMap::new();
    for (lot, lot_entries) in &entries {
        let start = *lot_entries.keys().next().expect("non-empty per-lot map");
        let naive = departures.get(*lot).unwrap_or(&empty);
        let series = HourlySeries::from_map(naive, start, weeks * 7 * 24);
        let smoothed = smooth_departures(&series, smoothing)?;
        estimate_rates(lot, lot_entries, &smoothed, start, weeks, &mut table)?;
    }
    Ok(table)
}

pub fn run_ingest(cfg: &RunConfig) -> Result<IngestReport> {
    let g = load_graph(&cfg.inputs.graph)?;
    let surveys = read_surveys(&cfg.inputs.surveys)?;
    if let Some(bad) = surveys.iter().find(|s| g.edge_index(&s.block_id).is_err()) {
        return Err(Error::UnknownBlock(format!(
            "survey of meter `{}` names `{}`",
            bad.meter_id, bad.block_id
        )));
    }
    let combined = combine_surveys(&surveys);
    log::info!(
        "{} survey records, {} without timestamp, {} block samples",
        surveys.len(),
        combined.discarded,
        combined.samples.len()
    );
    write_samples(out_path(cfg, SAMPLES_FILE), &combined.samples)?;

    let events = read_lot_events(&cfg.inputs.lot_events)?;
    let table = lot_rates_from_events(&events, &cfg.smoothing, cfg.rate_weeks)?;
    write_rates(out_path(cfg, RATES_FILE), &table)?;

    let available = combined.samples.iter().filter(|s| s.available).count();
    let report = IngestReport {
        survey_records: surveys.len(),
        surveys_discarded: combined.discarded,
        samples: combined.samples.len(),
        available_fraction: if combined.samples.is_empty() {
            0.0
        } else {
            available as f64 / combined.samples.len() as f64
        },
        lots: table
            .rates
            .keys()
            .map(|k| &k.0)
            .collect::<BTreeSet<_>>()
            .len(),
        lot_departures_naive: events.iter().map(|e| e.paid_durations_s.len() as f64).sum(),
    };
    write_json(out_path(cfg, INGEST_REPORT_FILE), &report)?;
    Ok(report)
}

pub fn run_train(cfg: &RunConfig) -> Result<EvalReport> {
    let g = load_run_graph(cfg)?;
    let samples = read_samples(out_path(cfg, SAMPLES_FILE))?;
    let payments = PaymentIndex::new(&read_payments(&cfg.inputs.payments)?);
    let (model, report) = train(&samples, &payments, &g, &cfg.train)?;
    log::info!(
        "validation cross-entropy {:.4}, accuracy {:.3}",
        report.mean_val_cross_entropy,
        report.mean_val_accuracy
    );
    model.save(out_path(cfg, MODEL_FILE))?;
    write_json(out_path(cfg, TRAIN_REPORT_FILE), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub mlp: EvalReport,
    pub baseline: EvalReport,
    /// Baseline minus network mean validation cross-entropy.
    pub cross_entropy_gain: f64,
}

pub fn run_eval(cfg: &RunConfig) -> Result<ModelComparison> {
    let g = load_run_graph(cfg)?;
    let samples = read_samples(out_path(cfg, SAMPLES_FILE))?;
    let payments = PaymentIndex::new(&read_payments(&cfg.inputs.payments)?);
    let (_, mlp) = train(&samples, &payments, &g, &cfg.train)?;
    let (_, baseline) = train_baseline(&samples, &payments, &g, &cfg.train)?;
    let cmp = ModelComparison {
        cross_entropy_gain: baseline.mean_val_cross_entropy - mlp.mean_val_cross_entropy,
        mlp,
        baseline,
    };
    write_json(out_path(cfg, EVAL_REPORT_FILE), &cmp)?;
    Ok(cmp)
}

pub fn run_predict(cfg: &RunConfig) -> Result<Vec<ProbabilityRow>> {
    let g = load_run_graph(cfg)?;
    let model = Network::load(out_path(cfg, MODEL_FILE))?;
    let payments = PaymentIndex::new(&read_payments(&cfg.inputs.payments)?);
    let mut rows = Vec::with_capacity(cfg.hours.len() * g.edge_count());
    for &hour in &cfg.hours {
        for (block_id, p) in predict_block_probabilities(&model, &payments, &g, hour, cfg.date)? {
            rows.push(ProbabilityRow {
                block_id,
                hour,
                p_available: p,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.hour
            .cmp(&b.hour)
            .then_with(|| a.block_id.cmp(&b.block_id))
    });
    write_csv(out_path(cfg, PROBABILITIES_FILE), &rows)?;
    Ok(rows)
}

pub fn run_sim_on(cfg: &RunConfig) -> Result<Vec<OnstreetRow>> {
    let g = load_run_graph(cfg)?;
    let rows: Vec<ProbabilityRow> = read_csv(out_path(cfg, PROBABILITIES_FILE))?;
    let mut by_hour: BTreeMap<u32, BTreeMap<String, f64>> = BTreeMap::new();
    for r in rows {
        by_hour
            .entry(r.hour)
            .or_default()
            .insert(r.block_id, r.p_available);
    }
    let mut probs = BTreeMap::new();
    let mut missing = Vec::new();
    for &h in &cfg.hours {
        match by_hour.get(&h) {
            Some(p) => {
                probs.insert(h, probs_by_edge(&g, p)?);
            }
            None => missing.push(format!("hour {h}")),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Gaps {
            what: "availability predictions".into(),
            gaps: missing,
        });
    }
    let out = onstreet_sim::estimate_all(&g, &probs, &cfg.onstreet, cfg.policy)?;
    write_csv(out_path(cfg, ONSTREET_FILE), &out)?;
    Ok(out)
}

pub fn run_sim_off(cfg: &RunConfig) -> Result<Vec<OffstreetRow>> {
    let g = load_run_graph(cfg)?;
    let lots = read_lots(&cfg.inputs.lots)?;
    let rates = read_rates(out_path(cfg, RATES_FILE))?;
    let hours: Vec<u8> = cfg.hours.iter().map(|&h| h as u8).collect();
    let out =
        offstreet_sim::estimate_all(&g, &lots, &rates, cfg.day_of_week(), &hours, &cfg.lot_sim)?;
    write_csv(out_path(cfg, OFFSTREET_FILE), &out)?;
    Ok(out)
}

/// Keys rows by (block, hour), requiring each block of the graph exactly
/// once for every requested hour.
fn index_rows<T>(
    g: &RoadGraph,
    hours: &[u32],
    what: &str,
    rows: impl IntoIterator<Item = (String, u32, T)>,
) -> Result<BTreeMap<(u32, String), T>> {
    let mut map = BTreeMap::new();
    for (block, hour, v) in rows {
        g.edge_index(&block)?;
        if map.insert((hour, block.clone()), v).is_some() {
            return Err(Error::InvalidInput(format!(
                "{what}: block `{block}` hour {hour} appears twice"
            )));
        }
    }
    let mut gaps = Vec::new();
    for &h in hours {
        for e in g.edges() {
            if !map.contains_key(&(h, e.id.clone())) {
                gaps.push(format!("{} hour {h}", e.id));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Gaps {
            what: what.to_string(),
            gaps,
        });
    }
    Ok(map)
}

/// Joins `onstreet` and `offstreet` on (block, hour).
pub fn join_estimates(
    g: &RoadGraph,
    hours: &[u32],
    onstreet: &[OnstreetRow],
    offstreet: &[OffstreetRow],
) -> Result<Vec<TimeEstimate>> {
    let on = index_rows(
        g,
        hours,
        "on-street estimates",
        onstreet
            .iter()
            .map(|r| (r.block_id.clone(), r.hour, r.mean_onstreet_s)),
    )?;
    let off = index_rows(
        g,
        hours,
        "off-street estimates",
        offstreet
            .iter()
            .map(|r| (r.block_id.clone(), r.hour, r.mean_offstreet_s)),
    )?;
    let wanted: BTreeSet<u32> = hours.iter().copied().collect();
    Ok(on
        .into_iter()
        .filter(|((h, _), _)| wanted.contains(h))
        .map(|((hour, block), t_on)| {
            let t_off = off[&(hour, block.clone())];
            TimeEstimate::new(block, hour, t_on, t_off)
        })
        .collect())
}

/// Map file name such as `diff_h09.geojson`.
pub fn map_file_name(kind: &str, hour: u32) -> String {
    format!("{kind}_h{hour:02}.geojson")
}

pub fn run_diff(cfg: &RunConfig) -> Result<Vec<TimeEstimate>> {
    let g = load_graph(&cfg.inputs.graph)?;
    let onstreet: Vec<OnstreetRow> = read_csv(out_path(cfg, ONSTREET_FILE))?;
    let offstreet: Vec<OffstreetRow> = read_csv(out_path(cfg, OFFSTREET_FILE))?;
    let rows = join_estimates(&g, &cfg.hours, &onstreet, &offstreet)?;
    write_csv(out_path(cfg, DIFF_FILE), &rows)?;
    write_maps(&g, &rows, &cfg.output_dir.join(MAPS_DIR))?;
    Ok(rows)
}

/// One on-street, off-street and difference map per hour.
pub fn write_maps(g: &RoadGraph, rows: &[TimeEstimate], dir: &Path) -> Result<()> {
    let mut by_hour: BTreeMap<u32, Vec<&TimeEstimate>> = BTreeMap::new();
    for r in rows {
        by_hour.entry(r.hour).or_default().push(r);
    }
    for (hour, rows) in by_hour {
        for kind in MapKind::ALL {
            let bytes = geojson::to_bytes(&feature_collection(g, &rows, kind)?)?;
            io::write_atomic(&dir.join(map_file_name(kind.name(), hour)), &bytes)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub ingest: IngestReport,
    pub train: EvalReport,
    pub estimates: Vec<TimeEstimate>,
}

/// Runs every stage in order, stopping at the first failure.
pub fn run_pipeline(cfg: &RunConfig) -> std::result::Result<PipelineSummary, StageError> {
    let ingest = run_ingest(cfg).stage(Stage::Ingest)?;
    let train = run_train(cfg).stage(Stage::Train)?;
    run_predict(cfg).stage(Stage::Predict)?;
    run_sim_on(cfg).stage(Stage::SimOn)?;
    run_sim_off(cfg).stage(Stage::SimOff)?;
    let estimates = run_diff(cfg).stage(Stage::Diff)?;
    Ok(PipelineSummary {
        ingest,
        train,
        estimates,
    })
}
