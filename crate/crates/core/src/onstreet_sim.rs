//! Monte Carlo simulation of a driver cruising for a curbside spot.
//!
//! The driver starts in the middle of the destination block. Every block
//! traversed is one availability trial with the block's predicted
//! probability. At each intersection the next block is drawn from a softmax
//! over linear scores of distance to the destination, visit count, time
//! since the last check and inverse availability.
//!
//! Total time for a parked driver is
//! `t_min + (d_1/2 + d_2 + ... + d_n - d_n/2) + walk(parked → destination)`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::road_graph::{EdgeIdx, NodeIdx, RoadGraph};
use crate::seed::{rng_for, SimRng};
use crate::stats::mean_std;

/// Score weights for the block-choice softmax.
///
/// Units are a calibration choice: distance in hundreds of meters, elapsed
/// time in minutes (capped), visits as a raw count, availability as
/// `1 / max(P, p_floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    pub w_d: f64,
    pub w_n: f64,
    pub w_e: f64,
    pub w_p: f64,
}

impl Default for PolicyWeights {
    fn default() -> Self {
        PolicyWeights {
            w_d: -1.0,
            w_n: -15.0,
            w_e: 15.0,
            w_p: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnstreetConfig {
    /// Minimum time to park and pay at the meter.
    pub t_min_s: f64,
    /// Cruising cap; searches reaching it are censored.
    pub max_search_s: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Cap on the elapsed-since-last-check term.
    pub e_cap_s: f64,
    /// Floor applied to P before inverting it in the score.
    pub p_floor: f64,
}

impl Default for OnstreetConfig {
    fn default() -> Self {
        OnstreetConfig {
            t_min_s: 210.0,
            max_search_s: 1800.0,
            n_samples: 200,
            seed: 0,
            e_cap_s: 1800.0,
            p_floor: 0.05,
        }
    }
}

impl OnstreetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.t_min_s, self.max_search_s, self.e_cap_s, self.p_floor];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) || self.n_samples == 0 {
            return Err(Error::Config(
                "on-street parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Driver memory during one search.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub current_node: NodeIdx,
    pub elapsed_s: f64,
    /// Times each block has been checked.
    pub visits: Vec<u32>,
    /// Elapsed time at each block's most recent check.
    pub last_check_s: Vec<Option<f64>>,
}

impl SearchState {
    pub fn new(g: &RoadGraph, node: NodeIdx) -> Self {
        SearchState {
            current_node: node,
            elapsed_s: 0.0,
            visits: vec![0; g.edge_count()],
            last_check_s: vec![None; g.edge_count()],
        }
    }

    fn check(&mut self, block: EdgeIdx, at_s: f64) {
        self.visits[block.0] += 1;
        self.last_check_s[block.0] = Some(at_s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Block parked on, or the last block driven when censored.
    pub parked_block: EdgeIdx,
    pub drive_s: f64,
    pub walk_s: f64,
    pub total_s: f64,
    pub censored: bool,
}

/// Everything a search for one (destination, hour) needs, precomputed.
#[derive(Debug, Clone)]
pub struct SearchContext<'a> {
    pub graph: &'a RoadGraph,
    /// P(available) per block, indexed by [`EdgeIdx`].
    pub probs: &'a [f64],
    pub dest: EdgeIdx,
    pub hour: usize,
    pub config: &'a OnstreetConfig,
    pub weights: PolicyWeights,
    distance_m: Vec<f64>,
    walk_s: Vec<f64>,
}

impl<'a> SearchContext<'a> {
    pub fn new(
        graph: &'a RoadGraph,
        probs: &'a [f64],
        dest: EdgeIdx,
        hour: usize,
        config: &'a OnstreetConfig,
        weights: PolicyWeights,
    ) -> Result<Self> {
        Self::with_fields(
            graph,
            probs,
            dest,
            hour,
            config,
            weights,
            graph.distance_field_to(dest),
            graph.walk_field_to(dest),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn with_fields(
        graph: &'a RoadGraph,
        probs: &'a [f64],
        dest: EdgeIdx,
        hour: usize,
        config: &'a OnstreetConfig,
        weights: PolicyWeights,
        distance_m: Vec<f64>,
        walk_s: Vec<f64>,
    ) -> Result<Self> {
        if probs.len() != graph.edge_count() {
            return Err(Error::InvalidInput(format!(
                "probability table has {} entries for {} blocks",
                probs.len(),
                graph.edge_count()
            )));
        }
        if !probs.iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        if dest.0 >= graph.edge_count() || hour >= 24 {
            return Err(Error::InvalidInput(
                "destination or hour out of range".into(),
            ));
        }
        Ok(SearchContext {
            graph,
            probs,
            dest,
            hour,
            config,
            weights,
            distance_m,
            walk_s,
        })
    }

    pub fn walk_to_dest(&self, block: EdgeIdx) -> f64 {
        self.walk_s[block.0]
    }

    pub fn distance_to_dest(&self, block: EdgeIdx) -> f64 {
        self.distance_m[block.0]
    }
}

/// Converts an id-keyed probability table into one indexed by [`EdgeIdx`].
pub fn probs_by_edge(g: &RoadGraph, probs: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
    g.edges()
        .iter()
        .map(|e| {
            probs.get(&e.id).copied().ok_or_else(|| Error::Gaps {
                what: "block probabilities".into(),
                gaps: vec![e.id.clone()],
            })
        })
        .collect()
}

/// `Z_i = w_D·D_i + w_N·N_i + w_E·E_i + w_P / max(P_i, p_floor)` for every
/// candidate, with `D_i` in hundreds of meters and `E_i` in minutes.
pub fn block_scores(
    state: &SearchState,
    candidates: &[EdgeIdx],
    ctx: &SearchContext<'_>,
) -> Vec<f64> {
    let cfg = ctx.config;
    let w = ctx.weights;
    candidates
        .iter()
        .map(|&b| {
            let d = ctx.distance_m[b.0] / 100.0;
            let n = f64::from(state.visits[b.0]);
            let e = match state.last_check_s[b.0] {
                Some(t) => (state.elapsed_s - t).min(cfg.e_cap_s),
                None => cfg.e_cap_s,
            } / 60.0;
            let p = ctx.probs[b.0].max(cfg.p_floor);
            w.w_d * d + w.w_n * n + w.w_e * e + w.w_p / p
        })
        .collect()
}

/// Samples an index with probability `softmax(scores)`.
pub fn choose_block<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no candidate blocks".into()));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::Numeric("non-finite block score".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(i);
        }
        u -= w;
    }
    // Rounding can leave u marginally above the last weight.
    Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
}

/// Softmax probabilities, shifted by the maximum score.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn simulate_single<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    rng: &mut R,
) -> Result<SearchOutcome> {
    run_search(ctx, rng, None)
}

/// Like [`simulate_single`], also returning the blocks traversed in order.
pub fn simulate_traced<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    rng: &mut R,
) -> Result<(SearchOutcome, Vec<EdgeIdx>)> {
    let mut trace = Vec::new();
    let outcome = run_search(ctx, rng, Some(&mut trace))?;
    Ok((outcome, trace))
}

fn run_search<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    rng: &mut R,
    mut trace: Option<&mut Vec<EdgeIdx>>,
) -> Result<SearchOutcome> {
    let g = ctx.graph;
    let cfg = ctx.config;
    let mut state = SearchState::new(g, g.head(ctx.dest));
    let mut block = ctx.dest;
    // Time at which the driver reaches the middle of `block`.
    let mut mid_s = 0.0;

    loop {
        if let Some(t) = trace.as_deref_mut() {
            t.push(block);
        }
        state.check(block, mid_s);
        if rng.random::<f64>() < ctx.probs[block.0] {
            let walk = ctx.walk_s[block.0];
            return Ok(SearchOutcome {
                parked_block: block,
                drive_s: mid_s,
                walk_s: walk,
                total_s: cfg.t_min_s + mid_s + walk,
                censored: false,
            });
        }

        state.elapsed_s = mid_s + g.drive_time(block, ctx.hour) / 2.0;
        state.current_node = g.head(block);
        if state.elapsed_s > cfg.max_search_s {
            let walk = ctx.walk_s[block.0];
            return Ok(SearchOutcome {
                parked_block: block,
                drive_s: cfg.max_search_s,
                walk_s: walk,
                total_s: cfg.t_min_s + cfg.max_search_s + walk,
                censored: true,
            });
        }

        let candidates = g.out_edges(state.current_node);
        let scores = block_scores(&state, candidates, ctx);
        block = candidates[choose_block(&scores, rng)?];
        mid_s = state.elapsed_s + g.drive_time(block, ctx.hour) / 2.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnstreetEstimate {
    pub mean_s: f64,
    pub std_s: f64,
    pub censored_fraction: f64,
    pub n_samples: usize,
}

/// Runs `n_samples` searches from one generator stream.
pub fn estimate_with_rng<R: Rng + ?Sized>(
    ctx: &SearchContext<'_>,
    rng: &mut R,
) -> Result<OnstreetEstimate> {
    let n = ctx.config.n_samples;
    let mut totals = Vec::with_capacity(n);
    let mut censored = 0usize;
    for _ in 0..n {
        let o = simulate_single(ctx, rng)?;
        censored += usize::from(o.censored);
        totals.push(o.total_s);
    }
    let (mean_s, std_s) = mean_std(&totals)
        .ok_or_else(|| Error::InvalidInput("n_samples must be positive".into()))?;
    Ok(OnstreetEstimate {
        mean_s,
        std_s,
        censored_fraction: censored as f64 / n as f64,
        n_samples: n,
    })
}

pub fn task_rng(seed: u64, block_id: &str, hour: usize) -> SimRng {
    rng_for(seed, &["onstreet".into(), block_id.into(), hour.into()])
}

/// Mean/std of total on-street time for `ctx.dest` at `ctx.hour`, with a
/// random stream derived from `(seed, block id, hour)`.
pub fn estimate_onstreet_time(ctx: &SearchContext<'_>) -> Result<OnstreetEstimate> {
    let mut rng = task_rng(ctx.config.seed, &ctx.graph.edge(ctx.dest).id, ctx.hour);
    estimate_with_rng(ctx, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnstreetRow {
    pub block_id: String,
    pub hour: u32,
    pub mean_onstreet_s: f64,
    pub std_onstreet_s: f64,
    pub censored_fraction: f64,
    pub n_samples: usize,
}

/// Estimates every (block, hour). `probs_by_hour` maps hour → per-edge P.
pub fn estimate_all(
    g: &RoadGraph,
    probs_by_hour: &BTreeMap<u32, Vec<f64>>,
    cfg: &OnstreetConfig,
    weights: PolicyWeights,
) -> Result<Vec<OnstreetRow>> {
    cfg.validate()?;
    let per_dest: Vec<Result<Vec<OnstreetRow>>> = g
        .edge_indices()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|dest| {
            let distance = g.distance_field_to(dest);
            let walk = g.walk_field_to(dest);
            let mut rows = Vec::with_capacity(probs_by_hour.len());
            for (&hour, probs) in probs_by_hour {
                let ctx = SearchContext::with_fields(
                    g,
                    probs,
                    dest,
                    hour as usize,
                    cfg,
                    weights,
                    distance.clone(),
                    walk.clone(),
                )?;
                let est = estimate_onstreet_time(&ctx)?;
                rows.push(OnstreetRow {
                    block_id: g.edge(dest).id.clone(),
                    hour,
                    mean_onstreet_s: est.mean_s,
                    std_onstreet_s: est.std_s,
                    censored_fraction: est.censored_fraction,
                    n_samples: est.n_samples,
                });
            }
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for rows in per_dest {
        out.extend(rows?);
    }
    out.sort_by(|a, b| {
        a.hour
            .cmp(&b.hour)
            .then_with(|| a.block_id.cmp(&b.block_id))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::road_graph::test_graphs::{edge, line, node, square};
    use rand::SeedableRng;

    fn cfg() -> OnstreetConfig {
        OnstreetConfig::default()
    }

    #[test]
    fn score_of_adjacent_unvisited_block() {
        let g = line();
        let probs = vec![1.0; g.edge_count()];
        let c = cfg();
        let dest = g.edge_index("b").unwrap();
        let ctx = SearchContext::new(&g, &probs, dest, 8, &c, PolicyWeights::default()).unwrap();
        let state = SearchState::new(&g, g.head(dest));
        // Z for the destination block itself: D = 0, N = 0, E = 30 min, P = 1.
        let z = block_scores(&state, &[dest], &ctx);
        assert_eq!(z, vec![449.0]);
    }

    #[test]
    fn visit_lowers_score_by_15() {
        let g = square();
        let probs = vec![0.4; g.edge_count()];
        let c = cfg();
        let ctx =
            SearchContext::new(&g, &probs, EdgeIdx(0), 8, &c, PolicyWeights::default()).unwrap();
        let mut state = SearchState::new(&g, NodeIdx(0));
        state.elapsed_s = 5000.0;
        let cands = g.out_edges(NodeIdx(0)).to_vec();
        let before = block_scores(&state, &cands, &ctx);
        state.visits[cands[0].0] += 1;
        let after = block_scores(&state, &cands, &ctx);
        assert_eq!(before[0] - after[0], 15.0);
        assert_eq!(before[1], after[1]);
    }

    #[test]
    fn identical_candidates_identical_scores() {
        let g = square();
        let probs = vec![0.4; g.edge_count()];
        let c = cfg();
        let ctx =
            SearchContext::new(&g, &probs, EdgeIdx(0), 8, &c, PolicyWeights::default()).unwrap();
        let state = SearchState::new(&g, NodeIdx(0));
        let z = block_scores(&state, &[EdgeIdx(3), EdgeIdx(3)], &ctx);
        assert_eq!(z[0], z[1]);
    }

    #[test]
    fn softmax_of_zero_and_ln3() {
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let shifted = softmax(&[1000.0, 1000.0 + 3f64.ln()]);
        assert!((shifted[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn choose_rejects_bad_scores() {
        let mut rng = SimRng::seed_from_u64(0);
        assert!(choose_block(&[], &mut rng).is_err());
        assert!(choose_block(&[0.0, f64::NAN], &mut rng).is_err());
        assert!(choose_block(&[0.0, f64::INFINITY], &mut rng).is_err());
    }

    #[test]
    fn choose_two_way_frequencies() {
        let mut rng = SimRng::seed_from_u64(42);
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| choose_block(&[0.0, 3f64.ln()], &mut rng).unwrap() == 1)
            .count();
        let p = hits as f64 / n as f64;
        let sigma = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * sigma, "{p}");
    }

    #[test]
    fn park_on_destination_is_t_min() {
        let g = line();
        let probs = vec![1.0; g.edge_count()];
        let c = cfg();
        let ctx = SearchContext::new(
            &g,
            &probs,
            g.edge_index("b").unwrap(),
            8,
            &c,
            PolicyWeights::default(),
        )
        .unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let (o, trace) = simulate_traced(&ctx, &mut rng).unwrap();
        assert_eq!(o.total_s, 210.0);
        assert_eq!(o.drive_s, 0.0);
        assert_eq!(o.walk_s, 0.0);
        assert_eq!(trace.len(), 1);
        let est = estimate_onstreet_time(&ctx).unwrap();
        assert_eq!(
            (est.mean_s, est.std_s, est.censored_fraction),
            (210.0, 0.0, 0.0)
        );
    }

    /// Total time recomputed from a trace, term by term:
    /// t_min + (d1/2 + Σ_{i≥2} d_i − d_n/2) + walk.
    fn eq2_total(t_min: f64, drive: &[f64], walk: &[f64]) -> f64 {
        let n = drive.len();
        let m = walk.len();
        let mut d = drive[0] / 2.0 - drive[n - 1] / 2.0;
        for x in &drive[1..] {
            d += x;
        }
        let mut w = 0.0;
        if m > 0 {
            w = walk[0] / 2.0 - walk[m - 1] / 2.0;
            for x in &walk[1..] {
                w += x;
            }
        }
        t_min + d + w
    }

    #[test]
    fn two_block_trace_matches_reference() {
        // dest a (10 s drive, 30 s walk) → b (20 s drive, 30 s walk); only b
        // has parking, and a → b is the only way out of n1.
        let nodes = vec![
            node("n0", 0.0, 0.0),
            node("n1", 0.0, 0.001),
            node("n2", 0.0, 0.002),
        ];
        let edges = vec![
            edge("a", "n0", "n1", 100.0, 10.0, 30.0),
            edge("b", "n1", "n2", 100.0, 20.0, 30.0),
            edge("back", "n2", "n0", 200.0, 40.0, 60.0),
        ];
        let g = RoadGraph::new(nodes, edges).unwrap();
        let probs = vec![0.0, 1.0, 0.0];
        let c = cfg();
        let ctx =
            SearchContext::new(&g, &probs, EdgeIdx(0), 8, &c, PolicyWeights::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        let (o, trace) = simulate_traced(&ctx, &mut rng).unwrap();
        assert_eq!(trace, vec![EdgeIdx(0), EdgeIdx(1)]);
        // Walk back from the middle of b to the middle of a: half of each.
        let expected = eq2_total(210.0, &[10.0, 20.0], &[30.0, 30.0]);
        assert_eq!(expected, 210.0 + (5.0 + 20.0 - 10.0) + 30.0);
        assert_eq!(o.total_s, expected);
        assert!(!o.censored);
    }

    #[test]
    fn single_block_geometric_mean() {
        // Self-loop city: every traversal is the same block. With P = 0.5 the
        // number of failed traversals k is geometric, T = 210 + k·d.
        let nodes = vec![node("n", 0.0, 0.0)];
        let edges = vec![edge("loop", "n", "n", 100.0, 20.0, 60.0)];
        let g = RoadGraph::new(nodes, edges).unwrap();
        let probs = vec![0.5];
        let c = OnstreetConfig {
            n_samples: 10_000,
            seed: 99,
            ..cfg()
        };
        let ctx =
            SearchContext::new(&g, &probs, EdgeIdx(0), 8, &c, PolicyWeights::default()).unwrap();
        let est = estimate_onstreet_time(&ctx).unwrap();
        let p: f64 = 0.5;
        let d = 20.0;
        let mean = 210.0 + d * (1.0 - p) / p;
        let sd = d * (1.0 - p).sqrt() / p;
        let se = sd / (10_000f64).sqrt();
        assert!(
            (est.mean_s - mean).abs() < 3.0 * se,
            "{} vs {mean}",
            est.mean_s
        );
        assert_eq!(est.censored_fraction, 0.0);
    }

    #[test]
    fn censoring_when_nothing_available() {
        let g = square();
        let probs = vec![0.0; g.edge_count()];
        let c = OnstreetConfig {
            n_samples: 20,
            ..cfg()
        };
        let ctx =
            SearchContext::new(&g, &probs, EdgeIdx(0), 8, &c, PolicyWeights::default()).unwrap();
        let est = estimate_onstreet_time(&ctx).unwrap();
        assert_eq!(est.censored_fraction, 1.0);
        let mut rng = SimRng::seed_from_u64(5);
        let o = simulate_single(&ctx, &mut rng).unwrap();
        assert!(o.censored);
        assert_eq!(o.total_s, 210.0 + 1800.0 + o.walk_s);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = square();
        let probs = vec![0.3; g.edge_count()];
        let c = cfg();
        let ctx =
            SearchContext::new(&g, &probs, EdgeIdx(2), 17, &c, PolicyWeights::default()).unwrap();
        assert_eq!(
            estimate_onstreet_time(&ctx).unwrap(),
            estimate_onstreet_time(&ctx).unwrap()
        );
    }

    #[test]
    fn rejects_bad_probability_table() {
        let g = square();
        let c = cfg();
        let short = vec![0.5; 3];
        assert!(
            SearchContext::new(&g, &short, EdgeIdx(0), 8, &c, PolicyWeights::default()).is_err()
        );
        let bad = vec![1.5; g.edge_count()];
        assert!(SearchContext::new(&g, &bad, EdgeIdx(0), 8, &c, PolicyWeights::default()).is_err());
    }

    #[test]
    fn estimate_all_covers_every_block_hour() {
        let g = square();
        let mut by_hour = BTreeMap::new();
        by_hour.insert(8, vec![0.5; g.edge_count()]);
        by_hour.insert(9, vec![0.2; g.edge_count()]);
        let c = OnstreetConfig {
            n_samples: 10,
            ..cfg()
        };
        let rows = estimate_all(&g, &by_hour, &c, PolicyWeights::default()).unwrap();
        assert_eq!(rows.len(), 2 * g.edge_count());
        assert!(rows.iter().all(|r| r.mean_onstreet_s >= 210.0));
    }
}
