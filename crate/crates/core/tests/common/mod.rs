#![allow(dead_code)]

use std::collections::BTreeMap;

use parksim_core::occupancy_model::Example;
use parksim_core::road_graph::{BlockFace, EdgeIdx, Intersection, NodeIdx, RoadGraph};
use parksim_core::FeatureVector;
use rand::Rng;

/// Random strongly connected multigraph with 2..=`max_nodes` nodes and
/// integer travel times, so every path sum is exact in floating point.
pub fn random_graph<R: Rng>(rng: &mut R, max_nodes: usize) -> RoadGraph {
    let n = rng.random_range(2..=max_nodes);
    let nodes: Vec<Intersection> = (0..n)
        .map(|i| Intersection {
            id: format!("n{i}"),
            lat: 49.0 + i as f64 * 1e-3,
            lon: -123.0 + (i % 3) as f64 * 1e-3,
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..rng.random_range(0..=2 * n) {
        pairs.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    let edges = pairs
        .into_iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let length = rng.random_range(1..=20) as f64 * 10.0;
            let base = rng.random_range(1..=60) as f64;
            BlockFace {
                id: format!("e{k}"),
                from_node: format!("n{a}"),
                to_node: format!("n{b}"),
                length_m: length,
                meter_count: rng.random_range(0..=6),
                walk_time_s: rng.random_range(1..=200) as f64,
                drive_time_s: (0..24).map(|h| base + (h % 4) as f64).collect(),
            }
        })
        .collect();
    RoadGraph::new(nodes, edges).expect("random graph is valid")
}

/// Shortest path by enumerating every simple node path.
#[allow(clippy::too_many_arguments)]
fn brute_force(
    g: &RoadGraph,
    from: NodeIdx,
    to: NodeIdx,
    directed: bool,
    cost: &dyn Fn(EdgeIdx) -> f64,
) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn go(
        g: &RoadGraph,
        at: NodeIdx,
        to: NodeIdx,
        directed: bool,
        cost: &dyn Fn(EdgeIdx) -> f64,
        visited: &mut Vec<bool>,
        acc: f64,
        best: &mut f64,
    ) {
        if at == to {
            *best = best.min(acc);
            return;
        }
        for e in g.edge_indices() {
            let next = if g.tail(e) == at {
                g.head(e)
            } else if !directed && g.head(e) == at {
                g.tail(e)
            } else {
                continue;
            };
            if visited[next.0] {
                continue;
            }
            visited[next.0] = true;
            go(g, next, to, directed, cost, visited, acc + cost(e), best);
            visited[next.0] = false;
        }
    }
    let mut visited = vec![false; g.node_count()];
    visited[from.0] = true;
    let mut best = f64::INFINITY;
    go(g, from, to, directed, cost, &mut visited, 0.0, &mut best);
    best
}

/// Midpoint-to-midpoint drive time by exhaustive enumeration.
pub fn brute_drive(g: &RoadGraph, src: EdgeIdx, dst: EdgeIdx, hour: usize) -> f64 {
    if src == dst {
        return 0.0;
    }
    let between = brute_force(g, g.head(src), g.tail(dst), true, &|e| {
        g.drive_time(e, hour)
    });
    g.drive_time(src, hour) / 2.0 + between + g.drive_time(dst, hour) / 2.0
}

/// Midpoint-to-midpoint walk time (undirected) by exhaustive enumeration.
pub fn brute_walk(g: &RoadGraph, src: EdgeIdx, dst: EdgeIdx) -> f64 {
    if src == dst {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for a in [g.tail(src), g.head(src)] {
        for b in [g.tail(dst), g.head(dst)] {
            best = best.min(brute_force(g, a, b, false, &|e| g.walk_time(e)));
        }
    }
    g.walk_time(src) / 2.0 + best + g.walk_time(dst) / 2.0
}

/// Labels follow an XOR of two thresholds with 10% label noise: no linear
/// boundary separates the classes.
pub fn xor_dataset<R: Rng>(rng: &mut R, n: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let active = rng.random_range(0..=10) as f64;
            let popularity = rng.random_range(0..=20) as f64;
            let length = rng.random_range(50.0..200.0);
            let congestion = rng.random_range(0.05..0.3);
            let clean = (active > 5.0) != (congestion > 0.175);
            let available = if rng.random::<f64>() < 0.9 {
                clean
            } else {
                !clean
            };
            Example {
                features: FeatureVector::from_array([active, popularity, length, congestion]),
                available,
            }
        })
        .collect()
}

/// Labels drawn from a logistic model that is linear in the features.
pub fn linear_dataset<R: Rng>(rng: &mut R, n: usize) -> Vec<Example> {
    (0..n)
        .map(|_| {
            let x: [f64; 4] = [
                rng.random_range(0.0..10.0),
                rng.random_range(0.0..20.0),
                rng.random_range(50.0..200.0),
                rng.random_range(0.05..0.3),
            ];
            let z: f64 = 2.0 - 0.5 * x[0] + 0.05 * x[1] + 0.004 * x[2] - 4.0 * x[3];
            let p = 1.0 / (1.0 + (-z).exp());
            Example {
                features: FeatureVector::from_array(x),
                available: rng.random::<f64>() < p,
            }
        })
        .collect()
}

/// Every regular file under `dir`, keyed by relative path.
pub fn read_tree(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(dir)
                    .expect("under dir")
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&p).expect("readable file"));
            }
        }
    }
    out
}
