//! Synthetic grid city in the same file formats as the real inputs.
//!
//! Demand is strongest at the grid centre, so central blocks are nearly
//! always full at midday while corner blocks stay mostly free. One lot sits
//! at the centre; part of its customers pay a flat rate that expires at
//! 18:00, which produces the departure spike the smoothing step corrects.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use super::formats::{
    write_graph, write_json, write_lot_events, write_lots, write_payments, write_surveys,
};
use super::lots::LotEventRecord;
use super::surveys::SurveyRecord;
use crate::error::{Error, Result};
use crate::occupancy_model::PaymentRecord;
use crate::offstreet_sim::LotSpec;
use crate::road_graph::{BlockFace, Intersection, RoadGraph, HOURS_PER_DAY};
use crate::seed::{rng_for, SimRng};

pub const GRAPH_FILE: &str = "graph.json";
pub const PAYMENTS_FILE: &str = "payments.csv";
pub const SURVEYS_FILE: &str = "surveys.csv";
pub const LOTS_FILE: &str = "lots.json";
pub const LOT_EVENTS_FILE: &str = "lot_events.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

const METERS_PER_DEG_LAT: f64 = 111_320.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Intersections per side.
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub block_length_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Free-flow drive speed.
    pub drive_speed_mps: f64,
    pub walk_speed_mps: f64,
    /// Extra drive time at the centre during peak hours, as a fraction.
    pub peak_congestion: f64,
    pub min_meters: u32,
    pub max_meters: u32,
    /// First day of payment data; should be a Monday.
    pub start_date: NaiveDate,
    pub payment_days: usize,
    /// Demand over capacity at the centre at full daytime demand.
    pub central_load: f64,
    /// Demand over capacity far from the centre.
    pub outer_load: f64,
    pub mean_stay_s: f64,
    /// Fraction of parked drivers who pay at all.
    pub pay_fraction: f64,
    /// Fraction of paid sessions that appear in the payments file.
    pub observed_fraction: f64,
    pub survey_rounds: usize,
    pub survey_missing_fraction: f64,
    pub lot_capacity: usize,
    pub lot_weeks: usize,
    /// Weekday arrivals per hour at the daytime peak.
    pub lot_peak_arrivals: f64,
    pub lot_mean_stay_s: f64,
    /// Fraction of morning lot customers on the flat rate ending at 18:00.
    pub lot_flat_rate_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            grid_rows: 10,
            grid_cols: 10,
            block_length_m: 100.0,
            origin_lat: 49.2800,
            origin_lon: -123.1200,
            drive_speed_mps: 25.0 / 3.0,
            walk_speed_mps: 1.35,
            peak_congestion: 0.8,
            min_meters: 3,
            max_meters: 8,
            start_date: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            payment_days: 7,
            central_load: 1.4,
            outer_load: 0.3,
            mean_stay_s: 5400.0,
            pay_fraction: 0.9,
            observed_fraction: 0.6,
            survey_rounds: 10,
            survey_missing_fraction: 0.17,
            lot_capacity: 200,
            lot_weeks: 12,
            lot_peak_arrivals: 45.0,
            lot_mean_stay_s: 7200.0,
            lot_flat_rate_fraction: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fraction = |v: f64| (0.0..=1.0).contains(&v);
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let problem = if self.grid_rows < 2 || self.grid_cols < 2 {
            Some("grid must be at least 2×2")
        } else if !positive(self.block_length_m)
            || !positive(self.drive_speed_mps)
            || !positive(self.walk_speed_mps)
        {
            Some("lengths and speeds must be positive")
        } else if !(self.peak_congestion.is_finite() && self.peak_congestion >= 0.0) {
            Some("peak congestion must be non-negative")
        } else if self.min_meters > self.max_meters {
            Some("min_meters exceeds max_meters")
        } else if self.payment_days == 0 || self.lot_weeks == 0 {
            Some("payment_days and lot_weeks must be positive")
        } else if !positive(self.mean_stay_s) || !positive(self.lot_mean_stay_s) {
            Some("mean stays must be positive")
        } else if !(self.central_load >= 0.0
            && self.outer_load >= 0.0
            && self.lot_peak_arrivals >= 0.0)
        {
            Some("loads must be non-negative")
        } else if !fraction(self.pay_fraction)
            || !fraction(self.observed_fraction)
            || !fraction(self.survey_missing_fraction)
            || !fraction(self.lot_flat_rate_fraction)
        {
            Some("fractions must lie in [0, 1]")
        } else if self.lot_capacity == 0 {
            Some("lot capacity must be positive")
        } else if !(self.origin_lat.abs() < 89.0 && self.origin_lon.abs() <= 180.0) {
            Some("origin outside valid coordinates")
        } else {
            None
        };
        match problem {
            Some(p) => Err(Error::Config(format!("synthetic city: {p}"))),
            None => Ok(()),
        }
    }

    /// Intersection at which the lot entrance sits.
    pub fn lot_node(&self) -> String {
        node_id(self.grid_rows / 2, self.grid_cols / 2)
    }

    pub fn epoch(&self) -> NaiveDateTime {
        self.start_date.and_hms_opt(0, 0, 0).expect("midnight")
    }
}

/// Actual occupancy behind the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Stay intervals are seconds since this instant.
    pub epoch: NaiveDateTime,
    pub blocks: BTreeMap<String, BlockTruth>,
    /// Paid sessions generated before observation sampling.
    pub sessions_generated: usize,
    pub lots: BTreeMap<String, LotTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTruth {
    pub capacity: u32,
    /// Half-open `[arrive, leave)` stays, sorted by arrival.
    pub stays: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotTruth {
    /// Generating arrival rates, `[day of week][hour]`.
    pub lambda_a: Vec<Vec<f64>>,
    /// Observed mean actual departures per hour, `[day of week][hour]`.
    pub lambda_d: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Cars parked on `block` at `t`.
    pub fn occupied(&self, block: &str, t: NaiveDateTime) -> Option<u32> {
        let b = self.blocks.get(block)?;
        let s = (t - self.epoch).num_milliseconds() as f64 / 1000.0;
        Some(b.stays.iter().filter(|[a, l]| *a <= s && s < *l).count() as u32)
    }

    /// Whether at least one spot on `block` is free at `t`.
    pub fn available(&self, block: &str, t: NaiveDateTime) -> Option<bool> {
        let cap = self.blocks.get(block)?.capacity;
        self.occupied(block, t).map(|n| n < cap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBundle {
    pub graph: RoadGraph,
    pub payments: Vec<PaymentRecord>,
    pub surveys: Vec<SurveyRecord>,
    pub lots: Vec<LotSpec>,
    pub lot_events: Vec<LotEventRecord>,
    pub ground_truth: GroundTruth,
}

impl SynthBundle {
    /// Writes the bundle under `dir` with the fixed file names.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_graph(dir.join(GRAPH_FILE), &self.graph)?;
        write_payments(dir.join(PAYMENTS_FILE), &self.payments)?;
        write_surveys(dir.join(SURVEYS_FILE), &self.surveys)?;
        write_lots(dir.join(LOTS_FILE), &self.lots)?;
        write_lot_events(dir.join(LOT_EVENTS_FILE), &self.lot_events)?;
        write_json(dir.join(GROUND_TRUTH_FILE), &self.ground_truth)
    }
}

fn node_id(r: usize, c: usize) -> String {
    format!("r{r}c{c}")
}

/// 0 at night, 1 through the working day.
fn street_demand(hour: usize) -> f64 {
    match hour {
        0..=5 => 0.05,
        6 => 0.2,
        7 => 0.5,
        8 => 0.8,
        9..=17 => 1.0,
        18 => 0.8,
        19..=20 => 0.6,
        21 => 0.4,
        _ => 0.15,
    }
}

fn peak_traffic(hour: usize) -> f64 {
    match hour {
        7..=9 | 16..=18 => 1.0,
        10..=15 => 0.5,
        19..=21 => 0.3,
        _ => 0.0,
    }
}

fn lot_demand(hour: usize) -> f64 {
    match hour {
        0..=5 => 0.02,
        6 => 0.2,
        7 => 0.6,
        8..=9 => 1.0,
        10..=13 => 0.7,
        14..=16 => 0.5,
        17..=18 => 0.4,
        19..=21 => 0.3,
        _ => 0.05,
    }
}

struct Grid {
    graph: RoadGraph,
    /// Centrality in [0, 1] per edge.
    centrality: Vec<f64>,
}

fn build_grid(cfg: &SynthConfig, rng: &mut SimRng) -> Result<Grid> {
    let (rows, cols) = (cfg.grid_rows, cfg.grid_cols);
    let dlat = cfg.block_length_m / METERS_PER_DEG_LAT;
    let dlon = cfg.block_length_m / (METERS_PER_DEG_LAT * cfg.origin_lat.to_radians().cos());
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Intersection {
                id: node_id(r, c),
                lat: cfg.origin_lat + r as f64 * dlat,
                lon: cfg.origin_lon + c as f64 * dlon,
            });
        }
    }

    let centre = ((rows - 1) as f64 / 2.0, (cols - 1) as f64 / 2.0);
    let max_dist = centre.0.hypot(centre.1);
    let mut segments = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                segments.push(((r, c), (r, c + 1)));
            }
            if r + 1 < rows {
                segments.push(((r, c), (r + 1, c)));
            }
        }
    }

    let free_flow = cfg.block_length_m / cfg.drive_speed_mps;
    let walk = cfg.block_length_m / cfg.walk_speed_mps;
    let mut edges = Vec::with_capacity(segments.len() * 2);
    let mut centrality = Vec::with_capacity(segments.len() * 2);
    for (a, b) in segments {
        let mid = ((a.0 + b.0) as f64 / 2.0, (a.1 + b.1) as f64 / 2.0);
        let cent = (1.0 - (mid.0 - centre.0).hypot(mid.1 - centre.1) / max_dist).clamp(0.0, 1.0);
        let drive: Vec<f64> = (0..HOURS_PER_DAY)
            .map(|h| free_flow * (1.0 + cfg.peak_congestion * cent * peak_traffic(h)))
            .collect();
        for (from, to) in [(a, b), (b, a)] {
            let span = f64::from(cfg.max_meters - cfg.min_meters);
            let expected = f64::from(cfg.min_meters) + span * cent;
            let meters = (expected + rng.random_range(-0.5..0.5)).round();
            let meters = meters.clamp(f64::from(cfg.min_meters), f64::from(cfg.max_meters)) as u32;
            let (f, t) = (node_id(from.0, from.1), node_id(to.0, to.1));
            edges.push(BlockFace {
                id: format!("{f}-{t}"),
                from_node: f,
                to_node: t,
                length_m: cfg.block_length_m,
                meter_count: meters,
                walk_time_s: walk,
                drive_time_s: drive.clone(),
            });
            centrality.push(cent);
        }
    }
    Ok(Grid {
        graph: RoadGraph::new(nodes, edges)?,
        centrality,
    })
}

/// Arrival times (seconds from epoch) of a Poisson process with hourly
/// piecewise-constant rate.
fn poisson_arrivals(rng: &mut SimRng, hours: usize, rate: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for h in 0..hours {
        let lambda = rate(h);
        if lambda <= 0.0 {
            continue;
        }
        let n = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
        let mut times: Vec<f64> = (0..n)
            .map(|_| (h as f64 + rng.random::<f64>()) * 3600.0)
            .collect();
        times.sort_by(f64::total_cmp);
        out.extend(times);
    }
    out
}

fn quarter_hours_up(s: f64) -> f64 {
    (s / 900.0).ceil().max(1.0) * 900.0
}

struct Street {
    blocks: BTreeMap<String, BlockTruth>,
    payments: Vec<PaymentRecord>,
    sessions: usize,
}

fn generate_street(cfg: &SynthConfig, grid: &Grid, rng: &mut SimRng) -> Street {
    let epoch = cfg.epoch();
    let hours = cfg.payment_days * 24;
    let stay = Exp::new(1.0 / cfg.mean_stay_s).expect("positive mean");
    let mut blocks = BTreeMap::new();
    let mut payments = Vec::new();
    let mut sessions = 0;
    for (e, face) in grid.graph.edges().iter().enumerate() {
        let cap = face.meter_count;
        let load = cfg.outer_load + (cfg.central_load - cfg.outer_load) * grid.centrality[e];
        let per_hour = f64::from(cap) * load * 3600.0 / cfg.mean_stay_s;
        let arrivals = poisson_arrivals(rng, hours, |h| per_hour * street_demand(h % 24));
        let mut stays: Vec<[f64; 2]> = Vec::new();
        let mut leaving: Vec<f64> = Vec::new();
        for t in arrivals {
            let d = stay.sample(rng).clamp(600.0, 6.0 * 3600.0);
            let pays = rng.random::<f64>() < cfg.pay_fraction;
            let observed = rng.random::<f64>() < cfg.observed_fraction;
            leaving.retain(|&l| l > t);
            if leaving.len() >= cap as usize {
                continue;
            }
            leaving.push(t + d);
            stays.push([t, t + d]);
            if pays {
                sessions += 1;
                if observed {
                    payments.push(PaymentRecord {
                        block_id: face.id.clone(),
                        start: epoch + Duration::seconds(t.floor() as i64),
                        duration_s: quarter_hours_up(d),
                    });
                }
            }
        }
        blocks.insert(
            face.id.clone(),
            BlockTruth {
                capacity: cap,
                stays,
            },
        );
    }
    payments.sort_by(|a, b| {
        a.start
            .cmp(&b.start)
            .then_with(|| a.block_id.cmp(&b.block_id))
    });
    Street {
        blocks,
        payments,
        sessions,
    }
}

fn generate_surveys(
    cfg: &SynthConfig,
    g: &RoadGraph,
    truth: &GroundTruth,
    rng: &mut SimRng,
) -> Vec<SurveyRecord> {
    let mut out = Vec::new();
    for face in g.edges() {
        for _ in 0..cfg.survey_rounds {
            let day = rng.random_range(0..cfg.payment_days) as i64;
            // Windows between 08:00 and 20:30.
            let half_hour = rng.random_range(16..42) as i64;
            let window = cfg.epoch() + Duration::days(day) + Duration::minutes(30 * half_hour);
            for i in 0..face.meter_count {
                let t = window + Duration::seconds(rng.random_range(0..1800));
                let occupied = truth.occupied(&face.id, t).expect("block in truth");
                let missing = rng.random::<f64>() < cfg.survey_missing_fraction;
                out.push(SurveyRecord {
                    meter_id: format!("{}#m{i}", face.id),
                    block_id: face.id.clone(),
                    timestamp: (!missing).then_some(t),
                    free: i >= occupied,
                });
            }
        }
    }
    out
}

struct LotData {
    events: Vec<LotEventRecord>,
    truth: LotTruth,
}

fn generate_lot(cfg: &SynthConfig, lot_id: &str, rng: &mut SimRng) -> LotData {
    let epoch = cfg.epoch();
    let hours = cfg.lot_weeks * 7 * 24;
    let stay = Exp::new(1.0 / cfg.lot_mean_stay_s).expect("positive mean");
    let rate = |dow: usize, hour: usize| {
        let weekday = if dow < 5 { 1.0 } else { 0.5 };
        cfg.lot_peak_arrivals * weekday * lot_demand(hour)
    };
    let lambda_a: Vec<Vec<f64>> = (0..7)
        .map(|d| (0..24).map(|h| rate(d, h)).collect())
        .collect();
    let mut departures = vec![vec![0.0; 24]; 7];
    let mut events = Vec::with_capacity(hours);
    for h in 0..hours {
        let hour_start = epoch + Duration::hours(h as i64);
        let (dow, hod) = (hour_start.weekday().num_days_from_monday() as usize, h % 24);
        let lambda = lambda_a[dow][hod];
        let n = if lambda > 0.0 {
            Poisson::new(lambda).expect("positive rate").sample(rng) as u32
        } else {
            0
        };
        let mut paid = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let offset = rng.random::<f64>() * 3600.0;
            let flat = (6..=11).contains(&hod) && rng.random::<f64>() < cfg.lot_flat_rate_fraction;
            let d = if flat {
                // Stays until late afternoon; the ticket runs to 18:00.
                let leave = 16.0 * 3600.0 + rng.random::<f64>() * 2.0 * 3600.0;
                let left = leave - (hod as f64 * 3600.0 + offset);
                paid.push((18 - hod) as f64 * 3600.0);
                left
            } else {
                let d = stay.sample(rng).clamp(900.0, 10.0 * 3600.0);
                paid.push((d / 1800.0).ceil() * 1800.0);
                d
            };
            let leave_hour = ((h as f64 * 3600.0 + offset + d) / 3600.0).floor() as usize;
            if leave_hour < hours {
                let t = epoch + Duration::hours(leave_hour as i64);
                departures[t.weekday().num_days_from_monday() as usize][leave_hour % 24] += 1.0;
            }
        }
        events.push(LotEventRecord {
            lot_id: lot_id.to_string(),
            hour: hour_start,
            entries: n,
            paid_durations_s: paid,
        });
    }
    let weeks = cfg.lot_weeks as f64;
    for row in &mut departures {
        for v in row.iter_mut() {
            *v /= weeks;
        }
    }
    LotData {
        events,
        truth: LotTruth {
            lambda_a,
            lambda_d: departures,
        },
    }
}

/// Generates a full synthetic dataset; identical configs give identical bundles.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    cfg.validate()?;
    let mut grid_rng = rng_for(cfg.seed, &["synth".into(), "grid".into()]);
    let grid = build_grid(cfg, &mut grid_rng)?;
    let mut street_rng = rng_for(cfg.seed, &["synth".into(), "street".into()]);
    let street = generate_street(cfg, &grid, &mut street_rng);

    let lot = LotSpec {
        id: "lot-centre".into(),
        node: cfg.lot_node(),
        capacity: cfg.lot_capacity,
    };
    let mut lot_rng = rng_for(
        cfg.seed,
        &["synth".into(), "lot".into(), lot.id.as_str().into()],
    );
    let lot_data = generate_lot(cfg, &lot.id, &mut lot_rng);

    let ground_truth = GroundTruth {
        epoch: cfg.epoch(),
        blocks: street.blocks,
        sessions_generated: street.sessions,
        lots: BTreeMap::from([(lot.id.clone(), lot_data.truth)]),
    };
    let mut survey_rng = rng_for(cfg.seed, &["synth".into(), "surveys".into()]);
    let surveys = generate_surveys(cfg, &grid.graph, &ground_truth, &mut survey_rng);

    Ok(SynthBundle {
        graph: grid.graph,
        payments: street.payments,
        surveys,
        lots: vec![lot],
        lot_events: lot_data.events,
        ground_truth,
    })
}
