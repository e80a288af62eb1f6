use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use parksim_bench::{grid, network_and_batch, spiky_departures};
use parksim_core::data_ingest::smooth_departures;
use parksim_core::offstreet_sim::sample_tick;
use parksim_core::onstreet_sim::{simulate_single, SearchContext};
use parksim_core::seed::rng_for;
use parksim_core::{EdgeIdx, LotSimConfig, LotState, NodeIdx, OnstreetConfig, PolicyWeights};

fn network(c: &mut Criterion) {
    let (net, batch) = network_and_batch(32);
    c.bench_function("forward", |b| {
        b.iter(|| net.forward(black_box(&batch[0].features)).unwrap())
    });
    c.bench_function("gradient_batch32", |b| {
        b.iter(|| net.gradient(black_box(&batch)).unwrap())
    });
}

fn shortest_paths(c: &mut Criterion) {
    let g = grid();
    c.bench_function("drive_tree_100_nodes", |b| {
        b.iter(|| g.drive_times_from(black_box(NodeIdx(0)), 9))
    });
    c.bench_function("walk_field_360_blocks", |b| {
        b.iter(|| g.walk_field_to(black_box(EdgeIdx(0))))
    });
}

fn onstreet(c: &mut Criterion) {
    let g = grid();
    let probs = vec![0.3; g.edge_count()];
    let cfg = OnstreetConfig::default();
    let ctx =
        SearchContext::new(&g, &probs, EdgeIdx(150), 12, &cfg, PolicyWeights::default()).unwrap();
    let mut rng = rng_for(3, &[]);
    c.bench_function("onstreet_search", |b| {
        b.iter(|| simulate_single(&ctx, &mut rng).unwrap())
    });
}

fn lot(c: &mut Criterion) {
    let cfg = LotSimConfig::default();
    let mut state = LotState::new(200, 100).unwrap();
    let mut rng = rng_for(4, &[]);
    c.bench_function("lot_tick_200_stalls", |b| {
        b.iter(|| sample_tick(&mut state, 60.0, 60.0, &cfg, &mut rng).unwrap())
    });
}

fn smoothing(c: &mut Criterion) {
    let (series, cfg) = spiky_departures();
    c.bench_function("smooth_12_weeks", |b| {
        b.iter(|| smooth_departures(black_box(&series), &cfg).unwrap())
    });
}

criterion_group!(benches, network, shortest_paths, onstreet, lot, smoothing);
criterion_main!(benches);
