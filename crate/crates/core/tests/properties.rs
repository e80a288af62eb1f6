mod common;

use chrono::{Duration, NaiveDateTime};
use parksim_core::data_ingest::{
    combine_surveys, derive_departures, smooth_departures, HourlySeries, LotEventRecord,
    SmoothingConfig, SurveyRecord,
};
use parksim_core::occupancy_model::{train_examples, FeatureNorm, ModelKind, NormStat, MLP_SHAPE};
use parksim_core::offstreet_sim::{apply_tick, arrival_wait_time, sample_tick};
use parksim_core::onstreet_sim::{
    block_scores, choose_block, simulate_traced, softmax, SearchContext, SearchState,
};
use parksim_core::road_graph::{BlockFace, EdgeIdx, GraphFile, Intersection};
use parksim_core::seed::{rng_for, SimRng};
use parksim_core::{
    FeatureVector, LotSimConfig, LotState, Network, OnstreetConfig, PolicyWeights, RoadGraph,
    TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn ts(s: &str) -> NaiveDateTime {
    s.parse().unwrap()
}

fn graph(seed: u64) -> RoadGraph {
    common::random_graph(&mut SimRng::seed_from_u64(seed), 8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_a_distribution(seed in any::<u64>(), x in prop::array::uniform4(-1e3f64..1e3)) {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut net = Network::init(&MLP_SHAPE, 1.0, &mut rng);
        net.feature_norm = FeatureNorm(std::array::from_fn(|_| NormStat { mean: 1.0, std: 3.0 }));
        let (a, b) = net.forward(&FeatureVector::from_array(x)).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn drive_triangle_inequality(seed in any::<u64>(), hour in 0usize..24) {
        let g = graph(seed);
        let ids: Vec<EdgeIdx> = g.edge_indices().collect();
        for &a in &ids {
            for &b in &ids {
                let ab = g.shortest_drive_time(a, b, hour).unwrap();
                prop_assert!(ab >= 0.0);
                for &c in ids.iter().take(4) {
                    let via = g.shortest_drive_time(a, c, hour).unwrap() + g.shortest_drive_time(c, b, hour).unwrap();
                    prop_assert!(ab <= via + 1e-9, "{a}->{b} {ab} > via {c} {via}");
                }
            }
        }
    }

    #[test]
    fn walk_is_symmetric(seed in any::<u64>()) {
        let g = graph(seed);
        for a in g.edge_indices() {
            for b in g.edge_indices() {
                prop_assert_eq!(g.shortest_walk_time(a, b).unwrap(), g.shortest_walk_time(b, a).unwrap());
            }
        }
    }

    #[test]
    fn edge_order_does_not_change_paths(seed in any::<u64>()) {
        let g = graph(seed);
        let mut file: GraphFile = g.to_file_format();
        file.edges.reverse();
        file.nodes.reverse();
        let h = RoadGraph::from_file_format(file).unwrap();
        for a in g.edges() {
            for b in g.edges() {
                let (ga, gb) = (g.edge_index(&a.id).unwrap(), g.edge_index(&b.id).unwrap());
                let (ha, hb) = (h.edge_index(&a.id).unwrap(), h.edge_index(&b.id).unwrap());
                prop_assert_eq!(g.shortest_drive_time(ga, gb, 7).unwrap(), h.shortest_drive_time(ha, hb, 7).unwrap());
                prop_assert_eq!(g.shortest_walk_time(ga, gb).unwrap(), h.shortest_walk_time(ha, hb).unwrap());
            }
        }
    }

    #[test]
    fn invalid_edges_are_rejected(seed in any::<u64>(), which in 0usize..5) {
        let g = graph(seed);
        let mut file = g.to_file_format();
        let e = &mut file.edges[0];
        match which {
            0 => e.length_m = -1.0,
            1 => e.walk_time_s = f64::NAN,
            2 => e.drive_time_s.truncate(23),
            3 => e.to_node = "missing".into(),
            _ => e.drive_time_s[5] = 0.0,
        }
        prop_assert!(RoadGraph::from_file_format(file).is_err());
    }

    #[test]
    fn lot_tick_conserves_vehicles(
        capacity in 1usize..60,
        init_frac in 0.0f64..=1.0,
        n_a in 0usize..80,
        n_d in 0usize..80,
        seed in any::<u64>(),
    ) {
        let initial = (capacity as f64 * init_frac).floor() as usize;
        let mut state = LotState::new(capacity, initial).unwrap();
        let o = apply_tick(&mut state, n_a, n_d, &mut SimRng::seed_from_u64(seed));
        let after = state.occupied_count();
        prop_assert!(after <= capacity);
        prop_assert_eq!(o.departed, n_d.min(initial));
        prop_assert_eq!(after, initial - o.departed + o.stalls_passed.len());
        prop_assert_eq!(o.stalls_passed.len() + o.overflow, n_a);
        // Arrivals fill stalls from the entrance in order.
        prop_assert!(o.stalls_passed.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn wait_time_grows_with_position(k in 1usize..20, n_d in 0usize..20, s in 0usize..300) {
        let cfg = LotSimConfig::default();
        let t = arrival_wait_time(k, n_d, s, &cfg);
        prop_assert!(t >= cfg.t_prime_min_s);
        prop_assert!(arrival_wait_time(k + 1, n_d, s, &cfg) > t);
        prop_assert!(arrival_wait_time(k, n_d, s + 1, &cfg) > t);
    }

    #[test]
    fn smoothing_conserves_and_stays_non_negative(
        counts in prop::collection::vec(0.0f64..50.0, 24..24 * 8),
        spikes in prop::collection::vec(0.0f64..500.0, 8),
        sigma in 0.5f64..6.0,
        span in 1usize..13,
    ) {
        let mut counts = counts;
        for (d, extra) in spikes.iter().enumerate() {
            if let Some(c) = counts.get_mut(d * 24 + 18) {
                *c += extra;
            }
        }
        let series = HourlySeries { start: ts("2024-03-04T00:00:00"), counts };
        let cfg = SmoothingConfig { peak_hours: vec![18], sigma_h: sigma, span_h: span };
        let out = smooth_departures(&series, &cfg).unwrap();
        prop_assert!((out.total() - series.total()).abs() <= 1e-6);
        prop_assert!(out.counts.iter().all(|&c| c >= 0.0));
        prop_assert_eq!(out.counts.len(), series.counts.len());
    }

    #[test]
    fn departures_conserve_counts(durations in prop::collection::vec(prop::collection::vec(0.0f64..86_400.0, 0..6), 1..20)) {
        let events: Vec<LotEventRecord> = durations
            .iter()
            .enumerate()
            .map(|(h, d)| LotEventRecord {
                lot_id: if h % 3 == 0 { "A".into() } else { "B".into() },
                hour: ts("2024-03-04T00:00:00") + Duration::hours(h as i64),
                entries: d.len() as u32 + (h % 2) as u32,
                paid_durations_s: d.clone(),
            })
            .collect();
        let out = derive_departures(&events).unwrap();
        let total: f64 = out.values().flat_map(|m| m.values()).sum();
        prop_assert_eq!(total, durations.iter().map(Vec::len).sum::<usize>() as f64);
    }

    #[test]
    fn surveys_give_one_sample_per_window(
        raw in prop::collection::vec((0usize..4, 0i64..6 * 3600, any::<bool>(), any::<bool>()), 0..60),
    ) {
        let records: Vec<SurveyRecord> = raw
            .iter()
            .enumerate()
            .map(|(i, &(b, s, free, missing))| SurveyRecord {
                meter_id: format!("m{i}"),
                block_id: format!("b{b}"),
                timestamp: (!missing).then(|| ts("2024-03-04T08:00:00") + Duration::seconds(s)),
                free,
            })
            .collect();
        let combined = combine_surveys(&records);
        let mut seen = std::collections::BTreeSet::new();
        for s in &combined.samples {
            prop_assert!(seen.insert((s.block_id.clone(), s.time)));
        }
        prop_assert_eq!(combined.discarded, raw.iter().filter(|r| r.3).count());
        let reordered: Vec<SurveyRecord> = records.iter().rev().cloned().collect();
        prop_assert_eq!(combine_surveys(&reordered), combined);
    }

    #[test]
    fn softmax_shift_invariant(scores in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -1e4f64..1e4) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let (p, q) = (softmax(&scores), softmax(&shifted));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn search_traces_follow_the_graph(seed in any::<u64>(), p in 0.0f64..0.6) {
        let g = graph(seed);
        let mut rng = SimRng::seed_from_u64(seed ^ 1);
        let probs: Vec<f64> = g.edge_indices().map(|_| rng.random_range(0.0..=p)).collect();
        let cfg = OnstreetConfig { max_search_s: 600.0, ..OnstreetConfig::default() };
        let dest = EdgeIdx(rng.random_range(0..g.edge_count()));
        let ctx = SearchContext::new(&g, &probs, dest, 10, &cfg, PolicyWeights::default()).unwrap();
        let (o, trace) = simulate_traced(&ctx, &mut rng).unwrap();
        prop_assert_eq!(trace[0], dest);
        for w in trace.windows(2) {
            prop_assert_eq!(g.head(w[0]), g.tail(w[1]));
        }
        prop_assert_eq!(*trace.last().unwrap(), o.parked_block);
        prop_assert!(o.total_s >= cfg.t_min_s);
        if o.censored {
            prop_assert_eq!(o.total_s, cfg.t_min_s + cfg.max_search_s + o.walk_s);
        } else {
            prop_assert!(o.drive_s <= cfg.max_search_s);
        }
    }
}

/// Ring of `n` blocks in both directions: every node has two exits.
fn two_way_ring(n: usize) -> RoadGraph {
    let nodes = (0..n)
        .map(|i| Intersection {
            id: format!("n{i}"),
            lat: 49.0 + (i as f64 * 0.001),
            lon: -123.0,
        })
        .collect();
    let face = |id: String, a: usize, b: usize| BlockFace {
        id,
        from_node: format!("n{a}"),
        to_node: format!("n{b}"),
        length_m: 100.0,
        meter_count: 3,
        walk_time_s: 74.0,
        drive_time_s: vec![12.0; 24],
    };
    let mut edges = Vec::new();
    for i in 0..n {
        edges.push(face(format!("f{i}"), i, (i + 1) % n));
        edges.push(face(format!("r{i}"), (i + 1) % n, i));
    }
    RoadGraph::new(nodes, edges).unwrap()
}

#[test]
fn heavy_visit_penalty_avoids_revisits() {
    let g = two_way_ring(12);
    let probs = vec![0.0; g.edge_count()];
    let cfg = OnstreetConfig {
        max_search_s: 10.0 * 12.0,
        ..OnstreetConfig::default()
    };
    let weights = PolicyWeights {
        w_n: -1e6,
        ..PolicyWeights::default()
    };
    for seed in 0..50 {
        let ctx = SearchContext::new(&g, &probs, EdgeIdx(0), 9, &cfg, weights).unwrap();
        let (_, trace) = simulate_traced(&ctx, &mut SimRng::seed_from_u64(seed)).unwrap();
        let mut seen = std::collections::BTreeSet::from([trace[0]]);
        for w in trace.windows(2) {
            let fresh = g.out_edges(g.head(w[0])).iter().any(|e| !seen.contains(e));
            assert!(
                !fresh || !seen.contains(&w[1]),
                "seed {seed}: avoidable revisit in {trace:?}"
            );
            seen.insert(w[1]);
        }
    }
}

#[test]
fn higher_availability_shortens_search() {
    let g = two_way_ring(10);
    let cfg = OnstreetConfig::default();
    let dest = EdgeIdx(0);
    let mean = |p: f64| {
        let probs = vec![p; g.edge_count()];
        let ctx = SearchContext::new(&g, &probs, dest, 9, &cfg, PolicyWeights::default()).unwrap();
        parksim_core::onstreet_sim::estimate_onstreet_time(&ctx)
            .unwrap()
            .mean_s
    };
    let means: Vec<f64> = [0.05, 0.2, 0.5, 0.9].iter().map(|&p| mean(p)).collect();
    assert!(means.windows(2).all(|w| w[0] > w[1]), "{means:?}");
}

#[test]
fn scores_favour_available_blocks() {
    let g = two_way_ring(6);
    let cfg = OnstreetConfig::default();
    let mut probs = vec![0.5; g.edge_count()];
    let dest = g.edge_index("f3").unwrap();
    let ctx = SearchContext::new(&g, &probs, dest, 9, &cfg, PolicyWeights::default()).unwrap();
    let state = SearchState::new(&g, g.tail(g.edge_index("f0").unwrap()));
    let cands = g.out_edges(state.current_node).to_vec();
    let base = block_scores(&state, &cands, &ctx);
    probs[cands[0].0] = 0.9;
    let ctx = SearchContext::new(&g, &probs, dest, 9, &cfg, PolicyWeights::default()).unwrap();
    let raised = block_scores(&state, &cands, &ctx);
    assert!(raised[0] > base[0]);
    assert_eq!(raised[1], base[1]);
}

#[test]
fn choice_frequencies_match_softmax() {
    let scores = [0.0, 1.0, -0.5, 2.0];
    let p = softmax(&scores);
    let n = 20_000;
    let mut rng = SimRng::seed_from_u64(42);
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[choose_block(&scores, &mut rng).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip(&p) {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (*c as f64 - n as f64 * p).abs() <= 4.0 * sd,
            "{counts:?} vs {p:?}"
        );
    }
}

#[test]
fn shortest_paths_match_enumeration() {
    for k in 0..20u64 {
        let g = common::random_graph(&mut SimRng::seed_from_u64(k), 7);
        for s in g.edge_indices() {
            for d in g.edge_indices() {
                assert_eq!(
                    g.shortest_drive_time(s, d, 3).unwrap(),
                    common::brute_drive(&g, s, d, 3)
                );
                assert_eq!(
                    g.shortest_walk_time(s, d).unwrap(),
                    common::brute_walk(&g, s, d)
                );
            }
        }
    }
}

#[test]
fn poisson_arrivals_are_calibrated_across_seeds() {
    let cfg = LotSimConfig::default();
    let lambda = 5.0;
    let mu = lambda * cfg.tick_s / 3600.0;
    let ticks = 5_000;
    let z: Vec<f64> = (0..40u64)
        .map(|seed| {
            let mut rng = rng_for(seed, &["calibration".into()]);
            let mut state = LotState::new(2_000, 0).unwrap();
            let total: usize = (0..ticks)
                .map(|_| {
                    sample_tick(&mut state, lambda, 0.0, &cfg, &mut rng)
                        .unwrap()
                        .arrivals
                })
                .sum();
            (total as f64 / ticks as f64 - mu) / (mu / ticks as f64).sqrt()
        })
        .collect();
    let mean_z = z.iter().sum::<f64>() / z.len() as f64;
    // The mean of 40 standard normals has standard deviation 1/√40 ≈ 0.16.
    assert!(mean_z.abs() < 0.6, "mean z {mean_z}");
    assert!(z.iter().filter(|v| v.abs() > 3.0).count() <= 1, "{z:?}");
}

#[test]
fn network_fits_xor_better_than_logistic() {
    let mut rng = SimRng::seed_from_u64(99);
    let data = common::xor_dataset(&mut rng, 1500);
    let cfg = TrainConfig {
        splits: 3,
        epochs: 60,
        seed: 1,
        ..TrainConfig::default()
    };
    let (_, mlp) = train_examples(&data, ModelKind::Mlp, &cfg).unwrap();
    let (_, base) = train_examples(&data, ModelKind::Logistic, &cfg).unwrap();
    assert!(
        mlp.mean_val_cross_entropy <= base.mean_val_cross_entropy - 0.02,
        "{mlp:?} {base:?}"
    );
}

#[test]
fn network_matches_logistic_on_linear_data() {
    let mut rng = SimRng::seed_from_u64(100);
    let data = common::linear_dataset(&mut rng, 3000);
    let cfg = TrainConfig {
        splits: 3,
        seed: 2,
        ..TrainConfig::default()
    };
    let (_, mlp) = train_examples(&data, ModelKind::Mlp, &cfg).unwrap();
    let (_, base) = train_examples(&data, ModelKind::Logistic, &cfg).unwrap();
    let gap = (mlp.mean_val_cross_entropy - base.mean_val_cross_entropy).abs();
    assert!(
        gap <= 0.01,
        "network {} vs baseline {}",
        mlp.mean_val_cross_entropy,
        base.mean_val_cross_entropy
    );
}

#[test]
fn synthetic_rates_recover_generating_lambda() {
    use parksim_core::data_ingest::{synth_generate, SynthConfig};
    use parksim_core::pipeline::lot_rates_from_events;
    let cfg = SynthConfig::default();
    let bundle = synth_generate(&cfg).unwrap();
    let table = lot_rates_from_events(
        &bundle.lot_events,
        &SmoothingConfig::default(),
        cfg.lot_weeks,
    )
    .unwrap();
    let truth = &bundle.ground_truth.lots["lot-centre"];
    let mut worst: f64 = 0.0;
    for (day, row) in truth.lambda_a.iter().enumerate() {
        for (hour, &lambda) in row.iter().enumerate() {
            let est = table
                .get("lot-centre", day as u8, hour as u8)
                .unwrap()
                .lambda_a;
            // Twelve weekly draws: standard error √(λ/12).
            let z = (est - lambda) / (lambda / cfg.lot_weeks as f64).sqrt().max(1e-9);
            worst = worst.max(z.abs());
        }
    }
    assert!(worst < 4.5, "max |z| {worst}");
    let total_a: f64 = table.rates.values().map(|r| r.lambda_a).sum();
    let total_d: f64 = table.rates.values().map(|r| r.lambda_d).sum();
    // Weekly arrivals and (smoothed, truncated) departures roughly balance.
    assert!(
        (total_a - total_d).abs() / total_a < 0.05,
        "{total_a} vs {total_d}"
    );
}
