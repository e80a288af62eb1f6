//! Off-street parking: a one-dimensional lot under Poisson arrivals and
//! departures, plus the drive and walk legs between a destination block and
//! the nearest lot.
//!
//! Stalls are ordered from the entrance. In each tick departures leave
//! first (uniformly among occupied stalls), then arrivals take the first
//! free stall in arrival order. The `k`-th arrival in a tick waits
//!
//! `T_k = t'_min + S_k·t_1 + min(k, N_d)/2·t_wait + Σ_{i=1}^{k-1} 2^{-i}·t_q`
//!
//! where `S_k` is the number of stalls driven past and `t_q` is the payment
//! queue base time (the lot minimum by default).

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::road_graph::{EdgeIdx, NodeIdx, RoadGraph};
use crate::seed::{rng_for, SimRng};
use crate::stats::mean_std;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LotSpec {
    pub id: String,
    /// Intersection at the lot entrance.
    pub node: String,
    pub capacity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    pub lambda_a: f64,
    pub lambda_d: f64,
}

/// Hourly Poisson rates keyed by (lot id, day of week 0 = Monday, hour).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LotRateTable {
    pub rates: BTreeMap<(String, u8, u8), RatePair>,
}

impl LotRateTable {
    pub fn insert(&mut self, lot: &str, day: u8, hour: u8, rates: RatePair) -> Result<()> {
        if day > 6 || hour > 23 {
            return Err(Error::InvalidInput(format!(
                "rate slot ({day}, {hour}) out of range"
            )));
        }
        let valid = |v: f64| v.is_finite() && v >= 0.0;
        if !valid(rates.lambda_a) || !valid(rates.lambda_d) {
            return Err(Error::InvalidInput(format!(
                "invalid rates for lot `{lot}` ({day}, {hour})"
            )));
        }
        self.rates.insert((lot.to_string(), day, hour), rates);
        Ok(())
    }

    pub fn get(&self, lot: &str, day: u8, hour: u8) -> Result<RatePair> {
        self.rates
            .get(&(lot.to_string(), day, hour))
            .copied()
            .ok_or_else(|| Error::Gaps {
                what: format!("rates of lot `{lot}`"),
                gaps: vec![format!("day {day} hour {hour}")],
            })
    }
}

/// How the payment-queue term of the wait formula is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seconds")]
pub enum QueueBase {
    /// Use the lot minimum time `t'_min`.
    #[default]
    LotMinimum,
    /// Use a fixed number of seconds (e.g. the on-street 210 s).
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LotSimConfig {
    pub t_prime_min_s: f64,
    pub t_wait_s: f64,
    /// Time to drive past one stall.
    pub t_1_s: f64,
    pub tick_s: f64,
    pub reps: usize,
    pub seed: u64,
    pub queue_base: QueueBase,
}

impl Default for LotSimConfig {
    fn default() -> Self {
        LotSimConfig {
            t_prime_min_s: 60.0,
            t_wait_s: 30.0,
            t_1_s: 0.54,
            tick_s: 60.0,
            reps: 20,
            seed: 0,
            queue_base: QueueBase::LotMinimum,
        }
    }
}

impl LotSimConfig {
    pub fn validate(&self) -> Result<()> {
        let v = [self.t_prime_min_s, self.t_wait_s, self.t_1_s, self.tick_s];
        if !v.iter().all(|x| x.is_finite() && *x > 0.0) || self.reps == 0 || self.tick_s > 3600.0 {
            return Err(Error::Config(
                "lot simulation parameters must be positive".into(),
            ));
        }
        if let QueueBase::Seconds(s) = self.queue_base {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config("queue base must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn queue_base_s(&self) -> f64 {
        match self.queue_base {
            QueueBase::LotMinimum => self.t_prime_min_s,
            QueueBase::Seconds(s) => s,
        }
    }

    fn ticks_per_hour(&self) -> usize {
        ((3600.0 / self.tick_s).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LotState {
    /// Stall flags, entrance first.
    pub occupied: Vec<bool>,
    pub clock_s: f64,
}

impl LotState {
    /// Stalls `1..=initial` occupied.
    pub fn new(capacity: usize, initial: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidInput(
                "lot capacity must be at least 1".into(),
            ));
        }
        if initial > capacity {
            return Err(Error::InvalidInput(format!(
                "initial occupancy {initial} exceeds capacity {capacity}"
            )));
        }
        let mut occupied = vec![false; capacity];
        occupied[..initial].iter_mut().for_each(|s| *s = true);
        Ok(LotState {
            occupied,
            clock_s: 0.0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.occupied.len()
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|s| **s).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TickOutcome {
    /// Arrivals drawn for the tick.
    pub arrivals: usize,
    /// Departures drawn for the tick.
    pub departures: usize,
    /// Departures that actually happened (bounded by occupancy).
    pub departed: usize,
    /// Stalls driven past by each parked arrival, in arrival order.
    pub stalls_passed: Vec<usize>,
    /// Arrivals that found the lot full.
    pub overflow: usize,
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::Numeric(format!("Poisson({mean}): {e}")))?;
    Ok(dist.sample(rng) as usize)
}

/// Draws `N_a ~ Poisson(λ_a·tick/3600)`, `N_d ~ Poisson(λ_d·tick/3600)` and
/// applies them with [`apply_tick`].
pub fn sample_tick<R: Rng + ?Sized>(
    state: &mut LotState,
    lambda_a: f64,
    lambda_d: f64,
    cfg: &LotSimConfig,
    rng: &mut R,
) -> Result<TickOutcome> {
    if !(lambda_a >= 0.0 && lambda_d >= 0.0 && lambda_a.is_finite() && lambda_d.is_finite()) {
        return Err(Error::InvalidInput(
            "rates must be finite and non-negative".into(),
        ));
    }
    let frac = cfg.tick_s / 3600.0;
    let n_a = poisson(lambda_a * frac, rng)?;
    let n_d = poisson(lambda_d * frac, rng)?;
    let out = apply_tick(state, n_a, n_d, rng);
    state.clock_s += cfg.tick_s;
    Ok(out)
}

/// Removes `min(n_d, occupied)` uniformly chosen vehicles, then parks up to
/// `n_a` arrivals, each in the lowest free stall.
pub fn apply_tick<R: Rng + ?Sized>(
    state: &mut LotState,
    n_a: usize,
    n_d: usize,
    rng: &mut R,
) -> TickOutcome {
    let occupied: Vec<usize> = (0..state.capacity())
        .filter(|&i| state.occupied[i])
        .collect();
    let departed = n_d.min(occupied.len());
    if departed > 0 {
        for pick in index::sample(rng, occupied.len(), departed) {
            state.occupied[occupied[pick]] = false;
        }
    }
    let mut stalls_passed = Vec::new();
    let mut next_free = 0;
    let mut overflow = 0;
    for _ in 0..n_a {
        while next_free < state.capacity() && state.occupied[next_free] {
            next_free += 1;
        }
        if next_free == state.capacity() {
            overflow += 1;
            continue;
        }
        state.occupied[next_free] = true;
        stalls_passed.push(next_free);
    }
    TickOutcome {
        arrivals: n_a,
        departures: n_d,
        departed,
        stalls_passed,
        overflow,
    }
}

/// In-lot time of the `k`-th arrival (1-based) of a tick.
pub fn arrival_wait_time(k: usize, n_d: usize, stalls_passed: usize, cfg: &LotSimConfig) -> f64 {
    assert!(k >= 1, "arrival index is 1-based");
    let mut queue = 0.0;
    let mut w = 0.5;
    for _ in 1..k {
        queue += w;
        w *= 0.5;
    }
    cfg.t_prime_min_s
        + stalls_passed as f64 * cfg.t_1_s
        + k.min(n_d) as f64 / 2.0 * cfg.t_wait_s
        + queue * cfg.queue_base_s()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotHourStats {
    /// Absent when no vehicle parked in any repetition.
    pub mean_s: Option<f64>,
    pub std_s: Option<f64>,
    pub arrivals: usize,
    pub overflow: usize,
}

/// One hour of lot activity at the (day, hour) rates, repeated `cfg.reps`
/// times with sub-seeds drawn from `rng`. Every parked arrival contributes
/// one wait sample; overflow arrivals are counted separately.
pub fn simulate_lot_hour<R: RngCore + ?Sized>(
    spec: &LotSpec,
    rates: &LotRateTable,
    day: u8,
    hour: u8,
    cfg: &LotSimConfig,
    initial_occupancy: usize,
    rng: &mut R,
) -> Result<LotHourStats> {
    cfg.validate()?;
    let RatePair { lambda_a, lambda_d } = rates.get(&spec.id, day, hour)?;
    let mut samples = Vec::new();
    let mut overflow = 0;
    for _ in 0..cfg.reps {
        let mut rep_rng = SimRng::seed_from_u64(rng.next_u64());
        let mut state = LotState::new(spec.capacity, initial_occupancy)?;
        for _ in 0..cfg.ticks_per_hour() {
            let tick = sample_tick(&mut state, lambda_a, lambda_d, cfg, &mut rep_rng)?;
            overflow += tick.overflow;
            for (k, &s) in tick.stalls_passed.iter().enumerate() {
                samples.push(arrival_wait_time(k + 1, tick.departed, s, cfg));
            }
        }
    }
    let stats = mean_std(&samples);
    Ok(LotHourStats {
        mean_s: stats.map(|s| s.0),
        std_s: stats.map(|s| s.1),
        arrivals: samples.len(),
        overflow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitialOccupancy {
    pub stalls: usize,
    pub clamped: bool,
}

/// Cumulative entries minus departures over the hours before `hour`,
/// rounded and clamped to `[0, capacity]`. `flows` maps hour of day to
/// (entries, departures).
pub fn initial_occupancy(
    flows: &BTreeMap<u8, (f64, f64)>,
    hour: u8,
    capacity: usize,
) -> Result<InitialOccupancy> {
    let gaps: Vec<String> = (0..hour)
        .filter(|h| !flows.contains_key(h))
        .map(|h| format!("hour {h}"))
        .collect();
    if !gaps.is_empty() {
        return Err(Error::Gaps {
            what: "lot flow history".into(),
            gaps,
        });
    }
    let net: f64 = (0..hour).map(|h| flows[&h].0 - flows[&h].1).sum();
    let rounded = net.round();
    let clamped = rounded < 0.0 || rounded > capacity as f64;
    if clamped {
        log::warn!("initial occupancy {rounded} clamped to [0, {capacity}]");
    }
    Ok(InitialOccupancy {
        stalls: rounded.clamp(0.0, capacity as f64) as usize,
        clamped,
    })
}

/// Expected occupancy at the start of `hour` from the rate table itself.
pub fn initial_occupancy_from_rates(
    rates: &LotRateTable,
    lot: &LotSpec,
    day: u8,
    hour: u8,
) -> Result<InitialOccupancy> {
    let mut flows = BTreeMap::new();
    for h in 0..hour {
        let r = rates.get(&lot.id, day, h)?;
        flows.insert(h, (r.lambda_a, r.lambda_d));
    }
    initial_occupancy(&flows, hour, lot.capacity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffstreetEstimate {
    pub total_s: f64,
    pub std_s: f64,
    pub lot_id: String,
    pub drive_s: f64,
    pub lot_s: f64,
    pub walk_s: f64,
}

fn lot_stream(cfg: &LotSimConfig, lot: &str, day: u8, hour: u8) -> SimRng {
    rng_for(
        cfg.seed,
        &[
            "lot".into(),
            lot.into(),
            u64::from(day).into(),
            u64::from(hour).into(),
        ],
    )
}

/// In-lot time (mean, std) for one (lot, day, hour); a lot that saw no
/// arrivals falls back to `t'_min` with zero spread.
pub fn lot_time(
    spec: &LotSpec,
    rates: &LotRateTable,
    day: u8,
    hour: u8,
    cfg: &LotSimConfig,
) -> Result<(f64, f64)> {
    let init = initial_occupancy_from_rates(rates, spec, day, hour)?;
    let mut rng = lot_stream(cfg, &spec.id, day, hour);
    let stats = simulate_lot_hour(spec, rates, day, hour, cfg, init.stalls, &mut rng)?;
    Ok(match (stats.mean_s, stats.std_s) {
        (Some(m), Some(s)) => (m, s),
        _ => (cfg.t_prime_min_s, 0.0),
    })
}

fn check_lots<'g>(g: &'g RoadGraph, lots: &'g [LotSpec]) -> Result<Vec<NodeIdx>> {
    if lots.is_empty() {
        return Err(Error::InvalidInput("no lots configured".into()));
    }
    lots.iter()
        .map(|l| {
            if l.capacity == 0 {
                return Err(Error::InvalidInput(format!(
                    "lot `{}` has zero capacity",
                    l.id
                )));
            }
            g.node_index(&l.node)
        })
        .collect()
}

/// Drive from the middle of `dest` to the lot with the shortest drive at
/// `hour`, park, and walk back to the middle of `dest`.
pub fn estimate_offstreet_time(
    g: &RoadGraph,
    lots: &[LotSpec],
    rates: &LotRateTable,
    dest: EdgeIdx,
    day: u8,
    hour: u8,
    cfg: &LotSimConfig,
) -> Result<OffstreetEstimate> {
    let nodes = check_lots(g, lots)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, &n) in nodes.iter().enumerate() {
        let d = g.drive_time_to_node(dest, n, hour as usize)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (i, drive_s) = best.expect("lots nonempty");
    let (lot_s, std_s) = lot_time(&lots[i], rates, day, hour, cfg)?;
    let walk_s = g.walk_time_node_to_block(nodes[i], dest);
    Ok(OffstreetEstimate {
        total_s: drive_s + lot_s + walk_s,
        std_s,
        lot_id: lots[i].id.clone(),
        drive_s,
        lot_s,
        walk_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffstreetRow {
    pub block_id: String,
    pub hour: u32,
    pub mean_offstreet_s: f64,
    pub std_offstreet_s: f64,
    pub lot_id: String,
    pub drive_s: f64,
    pub lot_s: f64,
    pub walk_s: f64,
}

/// [`estimate_offstreet_time`] for every block and hour, sharing the lot
/// simulation and shortest-path trees across blocks.
type LotHour = ((u8, usize), (f64, f64), Vec<f64>);

pub fn estimate_all(
    g: &RoadGraph,
    lots: &[LotSpec],
    rates: &LotRateTable,
    day: u8,
    hours: &[u8],
    cfg: &LotSimConfig,
) -> Result<Vec<OffstreetRow>> {
    cfg.validate()?;
    let nodes = check_lots(g, lots)?;
    let walk_from: Vec<Vec<f64>> = nodes.par_iter().map(|&n| g.walk_times_from(n)).collect();

    let tasks: Vec<(u8, usize)> = hours
        .iter()
        .flat_map(|&h| (0..lots.len()).map(move |l| (h, l)))
        .collect();
    let lot_results: Vec<Result<LotHour>> = tasks
        .into_par_iter()
        .map(|(h, l)| {
            let t = lot_time(&lots[l], rates, day, h, cfg)?;
            Ok(((h, l), t, g.drive_times_to(nodes[l], h as usize)))
        })
        .collect();
    let mut lot_stats = BTreeMap::new();
    let mut drive_to = BTreeMap::new();
    for r in lot_results {
        let (key, t, d) = r?;
        lot_stats.insert(key, t);
        drive_to.insert(key, d);
    }

    let mut rows = Vec::with_capacity(hours.len() * g.edge_count());
    for &h in hours {
        for dest in g.edge_indices() {
            let half = g.drive_time(dest, h as usize) / 2.0;
            let head = g.head(dest);
            let mut best: Option<(usize, f64)> = None;
            for l in 0..lots.len() {
                let d = drive_to[&(h, l)][head.0];
                if d.is_finite() && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((l, d));
                }
            }
            let (l, between) = best.ok_or_else(|| Error::NoPath {
                from: g.edge(dest).id.clone(),
                to: "any lot".into(),
            })?;
            let drive_s = half + between;
            let (lot_s, std_s) = lot_stats[&(h, l)];
            let w = &walk_from[l];
            let walk_s = w[g.tail(dest).0].min(w[head.0]) + g.walk_time(dest) / 2.0;
            rows.push(OffstreetRow {
                block_id: g.edge(dest).id.clone(),
                hour: u32::from(h),
                mean_offstreet_s: drive_s + lot_s + walk_s,
                std_offstreet_s: std_s,
                lot_id: lots[l].id.clone(),
                drive_s,
                lot_s,
                walk_s,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.hour
            .cmp(&b.hour)
            .then_with(|| a.block_id.cmp(&b.block_id))
    });
    Ok(rows)
}
