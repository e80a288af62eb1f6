//! Road network: intersections as nodes, block faces as directed edges.
//!
//! All block-to-block quantities use the midpoint convention: a trip from
//! block `a` to block `b` costs half of `a`, the full interior blocks, and
//! half of `b`. Driving respects edge direction; walking and distances
//! ignore it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeIdx(pub usize);

impl fmt::Display for EdgeIdx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

/// One directed side of a street segment between two intersections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFace {
    pub id: String,
    #[serde(rename = "from")]
    pub from_node: String,
    #[serde(rename = "to")]
    pub to_node: String,
    pub length_m: f64,
    pub meter_count: u32,
    pub walk_time_s: f64,
    /// Drive time through the block, one entry per hour of day.
    pub drive_time_s: Vec<f64>,
}

/// On-disk graph layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: Vec<Intersection>,
    pub edges: Vec<BlockFace>,
}

/// Validated, immutable road graph.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<Intersection>,
    edges: Vec<BlockFace>,
    node_ids: HashMap<String, NodeIdx>,
    edge_ids: HashMap<String, EdgeIdx>,
    tail: Vec<NodeIdx>,
    head: Vec<NodeIdx>,
    out_edges: Vec<Vec<EdgeIdx>>,
    incident: Vec<Vec<EdgeIdx>>,
}

impl PartialEq for RoadGraph {
    /// Everything else is derived from the node and edge lists.
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

fn valid_positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl RoadGraph {
    pub fn new(nodes: Vec<Intersection>, edges: Vec<BlockFace>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let mut node_ids = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !n.lat.is_finite() || !n.lon.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "node `{}` has non-finite coordinates",
                    n.id
                )));
            }
            if node_ids.insert(n.id.clone(), NodeIdx(i)).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node id `{}`", n.id)));
            }
        }

        let mut edge_ids = HashMap::with_capacity(edges.len());
        let mut tail = Vec::with_capacity(edges.len());
        let mut head = Vec::with_capacity(edges.len());
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut incident = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            if edge_ids.insert(e.id.clone(), EdgeIdx(i)).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge id `{}`", e.id)));
            }
            let from = *node_ids.get(&e.from_node).ok_or_else(|| {
                Error::InvalidGraph(format!(
                    "edge `{}` references unknown node `{}`",
                    e.id, e.from_node
                ))
            })?;
            let to = *node_ids.get(&e.to_node).ok_or_else(|| {
                Error::InvalidGraph(format!(
                    "edge `{}` references unknown node `{}`",
                    e.id, e.to_node
                ))
            })?;
            if !valid_positive(e.length_m) {
                return Err(Error::InvalidGraph(format!(
                    "edge `{}` has non-positive length",
                    e.id
                )));
            }
            if !valid_positive(e.walk_time_s) {
                return Err(Error::InvalidGraph(format!(
                    "edge `{}` has non-positive walk time",
                    e.id
                )));
            }
            if e.drive_time_s.len() != HOURS_PER_DAY {
                return Err(Error::InvalidGraph(format!(
                    "edge `{}` has {} drive times, expected {HOURS_PER_DAY}",
                    e.id,
                    e.drive_time_s.len()
                )));
            }
            if !e.drive_time_s.iter().all(|&d| valid_positive(d)) {
                return Err(Error::InvalidGraph(format!(
                    "edge `{}` has a non-positive drive time",
                    e.id
                )));
            }
            tail.push(from);
            head.push(to);
            out_edges[from.0].push(EdgeIdx(i));
            incident[from.0].push(EdgeIdx(i));
            if to != from {
                incident[to.0].push(EdgeIdx(i));
            }
        }

        // A driver arriving at a node must be able to leave it again.
        if let Some(n) = out_edges.iter().position(Vec::is_empty) {
            return Err(Error::InvalidGraph(format!(
                "node `{}` has no outgoing block (dead end without a U-turn edge)",
                nodes[n].id
            )));
        }

        let g = RoadGraph {
            nodes,
            edges,
            node_ids,
            edge_ids,
            tail,
            head,
            out_edges,
            incident,
        };
        g.check_connected()?;
        Ok(g)
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &e in &self.incident[n] {
                for m in [self.tail[e.0].0, self.head[e.0].0] {
                    if !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(n) => Err(Error::InvalidGraph(format!(
                "graph is disconnected: node `{}` unreachable from `{}`",
                self.nodes[n].id, self.nodes[0].id
            ))),
            None => Ok(()),
        }
    }

    pub fn from_file_format(file: GraphFile) -> Result<Self> {
        Self::new(file.nodes, file.edges)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s).map_err(|e| Error::parse("graph file", e))?;
        Self::from_file_format(file)
    }

    pub fn to_file_format(&self) -> GraphFile {
        GraphFile {
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        }
    }

    pub fn nodes(&self) -> &[Intersection] {
        &self.nodes
    }

    pub fn edges(&self) -> &[BlockFace] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_indices(&self) -> impl Iterator<Item = EdgeIdx> {
        (0..self.edges.len()).map(EdgeIdx)
    }

    pub fn node(&self, n: NodeIdx) -> &Intersection {
        &self.nodes[n.0]
    }

    pub fn edge(&self, e: EdgeIdx) -> &BlockFace {
        &self.edges[e.0]
    }

    pub fn node_index(&self, id: &str) -> Result<NodeIdx> {
        self.node_ids
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn edge_index(&self, id: &str) -> Result<EdgeIdx> {
        self.edge_ids
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownBlock(id.to_string()))
    }

    pub fn tail(&self, e: EdgeIdx) -> NodeIdx {
        self.tail[e.0]
    }

    pub fn head(&self, e: EdgeIdx) -> NodeIdx {
        self.head[e.0]
    }

    pub fn out_edges(&self, n: NodeIdx) -> &[EdgeIdx] {
        &self.out_edges[n.0]
    }

    pub fn drive_time(&self, e: EdgeIdx, hour: usize) -> f64 {
        self.edges[e.0].drive_time_s[hour]
    }

    pub fn walk_time(&self, e: EdgeIdx) -> f64 {
        self.edges[e.0].walk_time_s
    }

    pub fn length(&self, e: EdgeIdx) -> f64 {
        self.edges[e.0].length_m
    }

    /// Minimal midpoint-to-midpoint drive time from `src` to `dst`, with
    /// drive times taken at `hour` for the whole trip.
    pub fn shortest_drive_time(&self, src: EdgeIdx, dst: EdgeIdx, hour: usize) -> Result<f64> {
        check_hour(hour)?;
        if src == dst {
            return Ok(0.0);
        }
        let dist = self.drive_times_from(self.head(src), hour);
        let between = dist[self.tail(dst).0];
        if !between.is_finite() {
            return Err(self.no_path(src, dst));
        }
        Ok(self.drive_time(src, hour) / 2.0 + between + self.drive_time(dst, hour) / 2.0)
    }

    /// Drive time from the middle of `src` to intersection `target`.
    pub fn drive_time_to_node(&self, src: EdgeIdx, target: NodeIdx, hour: usize) -> Result<f64> {
        check_hour(hour)?;
        let dist = self.drive_times_from(self.head(src), hour);
        let between = dist[target.0];
        if !between.is_finite() {
            return Err(Error::NoPath {
                from: self.edge(src).id.clone(),
                to: self.node(target).id.clone(),
            });
        }
        Ok(self.drive_time(src, hour) / 2.0 + between)
    }

    /// Directed node-to-node drive times from `origin` at `hour`.
    pub fn drive_times_from(&self, origin: NodeIdx, hour: usize) -> Vec<f64> {
        dijkstra(self.nodes.len(), &[(origin, 0.0)], |n, relax| {
            for &e in &self.out_edges[n.0] {
                relax(self.head(e), self.drive_time(e, hour));
            }
        })
    }

    /// Directed drive times from every node to `target` at `hour`.
    pub fn drive_times_to(&self, target: NodeIdx, hour: usize) -> Vec<f64> {
        dijkstra(self.nodes.len(), &[(target, 0.0)], |n, relax| {
            for &e in &self.incident[n.0] {
                if self.head(e) == n {
                    relax(self.tail(e), self.drive_time(e, hour));
                }
            }
        })
    }

    /// Undirected walk times from `origin` to every node.
    pub fn walk_times_from(&self, origin: NodeIdx) -> Vec<f64> {
        dijkstra(self.nodes.len(), &[(origin, 0.0)], |n, relax| {
            for &e in &self.incident[n.0] {
                let other = if self.tail(e) == n {
                    self.head(e)
                } else {
                    self.tail(e)
                };
                relax(other, self.walk_time(e));
            }
        })
    }

    /// Minimal midpoint-to-midpoint walk time, ignoring edge direction.
    pub fn shortest_walk_time(&self, src: EdgeIdx, dst: EdgeIdx) -> Result<f64> {
        Ok(self.walk_field_to(dst)[src.0])
    }

    /// Midpoint-to-midpoint walking-network distance in meters.
    pub fn block_distance_m(&self, block: EdgeIdx, dest: EdgeIdx) -> Result<f64> {
        Ok(self.distance_field_to(dest)[block.0])
    }

    /// Walk time from the middle of every block to the middle of `dest`.
    pub fn walk_field_to(&self, dest: EdgeIdx) -> Vec<f64> {
        self.undirected_field(dest, |e| self.walk_time(e))
    }

    /// Walking distance (m) from the middle of every block to the middle of `dest`.
    pub fn distance_field_to(&self, dest: EdgeIdx) -> Vec<f64> {
        self.undirected_field(dest, |e| self.length(e))
    }

    /// Walk time from intersection `origin` to the middle of `dest`.
    pub fn walk_time_node_to_block(&self, origin: NodeIdx, dest: EdgeIdx) -> f64 {
        let dist = self.undirected_from_block_ends(dest, |e| self.walk_time(e));
        dist[origin.0] + self.walk_time(dest) / 2.0
    }

    fn undirected_from_block_ends(&self, dest: EdgeIdx, cost: impl Fn(EdgeIdx) -> f64) -> Vec<f64> {
        let sources = [(self.tail(dest), 0.0), (self.head(dest), 0.0)];
        dijkstra(self.nodes.len(), &sources, |n, relax| {
            for &e in &self.incident[n.0] {
                let other = if self.tail(e) == n {
                    self.head(e)
                } else {
                    self.tail(e)
                };
                relax(other, cost(e));
            }
        })
    }

    fn undirected_field(&self, dest: EdgeIdx, cost: impl Fn(EdgeIdx) -> f64 + Copy) -> Vec<f64> {
        let dist = self.undirected_from_block_ends(dest, cost);
        let half_dest = cost(dest) / 2.0;
        self.edge_indices()
            .map(|e| {
                if e == dest {
                    0.0
                } else {
                    let nearest = dist[self.tail(e).0].min(dist[self.head(e).0]);
                    cost(e) / 2.0 + nearest + half_dest
                }
            })
            .collect()
    }

    fn no_path(&self, src: EdgeIdx, dst: EdgeIdx) -> Error {
        Error::NoPath {
            from: self.edge(src).id.clone(),
            to: self.edge(dst).id.clone(),
        }
    }

    /// Returns a copy of the graph with travel times replaced from `table`.
    pub fn with_travel_times(&self, table: &TravelTimeTable) -> Result<Self> {
        table.check_covers(self)?;
        let mut edges = self.edges.clone();
        for e in &mut edges {
            for (hour, d) in e.drive_time_s.iter_mut().enumerate() {
                *d = table.drive[&(e.id.clone(), hour as u8)];
            }
            e.walk_time_s = table.walk[&e.id];
        }
        RoadGraph::new(self.nodes.clone(), edges)
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<RoadGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RoadGraph::from_json_str(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

fn check_hour(hour: usize) -> Result<()> {
    if hour >= HOURS_PER_DAY {
        return Err(Error::InvalidInput(format!("hour {hour} outside 0-23")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: NodeIdx,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, ties broken by node index.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra. `neighbors(n, relax)` calls `relax(m, cost)` for
/// every arc out of `n`. Unreachable nodes get `f64::INFINITY`.
fn dijkstra<F>(n_nodes: usize, sources: &[(NodeIdx, f64)], neighbors: F) -> Vec<f64>
where
    F: Fn(NodeIdx, &mut dyn FnMut(NodeIdx, f64)),
{
    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut heap = BinaryHeap::new();
    for &(n, c) in sources {
        if c < dist[n.0] {
            dist[n.0] = c;
            heap.push(HeapEntry { cost: c, node: n });
        }
    }
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node.0] {
            continue;
        }
        neighbors(node, &mut |m, w| {
            let next = cost + w;
            if next < dist[m.0] {
                dist[m.0] = next;
                heap.push(HeapEntry {
                    cost: next,
                    node: m,
                });
            }
        });
    }
    dist
}

/// Stored travel times: (edge id, hour) → drive seconds and edge id → walk seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TravelTimeTable {
    pub drive: BTreeMap<(String, u8), f64>,
    pub walk: BTreeMap<String, f64>,
}

impl TravelTimeTable {
    pub fn from_graph(g: &RoadGraph) -> Self {
        let mut table = TravelTimeTable::default();
        for e in g.edges() {
            for (h, &d) in e.drive_time_s.iter().enumerate() {
                table.drive.insert((e.id.clone(), h as u8), d);
            }
            table.walk.insert(e.id.clone(), e.walk_time_s);
        }
        table
    }

    pub fn check_covers(&self, g: &RoadGraph) -> Result<()> {
        let mut gaps = Vec::new();
        for e in g.edges() {
            match self.walk.get(&e.id) {
                Some(&w) if valid_positive(w) => {}
                Some(_) => gaps.push(format!("{} walk (non-positive)", e.id)),
                None => gaps.push(format!("{} walk", e.id)),
            }
            for h in 0..HOURS_PER_DAY as u8 {
                match self.drive.get(&(e.id.clone(), h)) {
                    Some(&d) if valid_positive(d) => {}
                    Some(_) => gaps.push(format!("{} drive@{h} (non-positive)", e.id)),
                    None => gaps.push(format!("{} drive@{h}", e.id)),
                }
            }
        }
        if gaps.is_empty() {
            Ok(())
        } else {
            Err(Error::Gaps {
                what: "travel time table".into(),
                gaps,
            })
        }
    }
}
