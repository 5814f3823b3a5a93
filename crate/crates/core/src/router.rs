//! Negotiated-congestion routing over the channel graph and the per-segment
//! utilization it produces.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{routing_graph, Dir, Floorplan, RoutingGraph, Segment};
use crate::netlist::Netlist;
use crate::placer::Placement;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("net {0}: sink unreachable from driver")]
    Disconnected(String),
    #[error("block {0} sits on a tile without a pin")]
    NoPin(String),
    #[error("empty region")]
    EmptyRegion,
    #[error("region out of bounds")]
    RegionOutOfBounds,
    #[error("utilization csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteConfig {
    pub max_iters: usize,
    pub pres_fac_init: f64,
    pub pres_fac_mult: f64,
    pub hist_fac: f64,
    /// Seeds the per-node tie-break order of equal-cost paths.
    pub seed: u64,
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            pres_fac_init: 0.5,
            pres_fac_mult: 1.3,
            hist_fac: 1.0,
            seed: 0,
        }
    }
}

/// Routing of one net: graph nodes with the index of each node's parent
/// inside `nodes` (the driver pin is the root).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteTree {
    pub nodes: Vec<usize>,
    pub parent: Vec<Option<usize>>,
}

impl RouteTree {
    pub fn segments<'a>(&'a self, g: &'a RoutingGraph) -> impl Iterator<Item = usize> + 'a {
        self.nodes.iter().copied().filter(|&n| g.is_segment(n))
    }

    pub fn segment_count(&self, g: &RoutingGraph) -> usize {
        self.segments(g).count()
    }
}

#[derive(Debug, Clone)]
pub struct RoutingResult {
    /// Route per net, parallel to [`Netlist::nets`].
    pub routes: Vec<RouteTree>,
    pub iterations: usize,
    pub overflow: bool,
    /// Over-capacity segment count at the end of each iteration.
    pub overused_per_iter: Vec<usize>,
}

impl RoutingResult {
    /// Tracks used per segment.
    pub fn occupancy(&self, g: &RoutingGraph) -> Vec<u32> {
        let mut occ = vec![0u32; g.n_segments()];
        for r in &self.routes {
            for s in r.segments(g) {
                occ[s] += 1;
            }
        }
        occ
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

struct Search {
    dist: Vec<f64>,
    prev: Vec<usize>,
    stamp: Vec<u32>,
    epoch: u32,
    heap: BinaryHeap<Reverse<(Cost, u64, usize)>>,
}

const NONE: usize = usize::MAX;

impl Search {
    fn new(n: usize) -> Self {
        Search {
            dist: vec![f64::INFINITY; n],
            prev: vec![NONE; n],
            stamp: vec![0; n],
            epoch: 0,
            heap: BinaryHeap::new(),
        }
    }

    fn reset(&mut self) {
        self.epoch += 1;
        self.heap.clear();
    }

    fn dist(&self, n: usize) -> f64 {
        if self.stamp[n] == self.epoch {
            self.dist[n]
        } else {
            f64::INFINITY
        }
    }

    fn relax(&mut self, n: usize, d: f64, from: usize, key: u64) {
        if d < self.dist(n) {
            self.stamp[n] = self.epoch;
            self.dist[n] = d;
            self.prev[n] = from;
            self.heap.push(Reverse((Cost(d), key, n)));
        }
    }
}

struct Negotiator<'g> {
    g: &'g RoutingGraph,
    occ: Vec<u32>,
    hist: Vec<f64>,
    pres_fac: f64,
    tie: Vec<u64>,
    search: Search,
}

impl<'g> Negotiator<'g> {
    fn node_cost(&self, n: usize) -> f64 {
        if !self.g.is_segment(n) {
            return 0.0;
        }
        let cap = self.g.capacity(n) as f64;
        let over = (self.occ[n] as f64 + 1.0 - cap).max(0.0);
        (1.0 + self.hist[n]) * (1.0 + self.pres_fac * over)
    }

    /// Incremental Steiner routing: grow the tree toward the nearest
    /// unreached sink until all sinks are connected.
    fn route_net(&mut self, driver: usize, sinks: &[usize]) -> Option<RouteTree> {
        let mut tree = RouteTree {
            nodes: vec![driver],
            parent: vec![None],
        };
        let mut in_tree = std::collections::HashMap::new();
        in_tree.insert(driver, 0usize);
        let mut remaining: Vec<usize> = sinks.iter().copied().filter(|&s| s != driver).collect();
        remaining.sort_unstable();
        remaining.dedup();
        while !remaining.is_empty() {
            self.search.reset();
            for &n in in_tree.keys() {
                // pins other than the driver are leaves, never expanded
                if n == driver || self.g.is_segment(n) {
                    self.search.relax(n, 0.0, NONE, self.tie[n]);
                }
            }
            let mut reached = None;
            while let Some(Reverse((Cost(d), _, n))) = self.search.heap.pop() {
                if d > self.search.dist(n) {
                    continue;
                }
                if !self.g.is_segment(n) && n != driver && !in_tree.contains_key(&n) {
                    if remaining.binary_search(&n).is_ok() {
                        reached = Some(n);
                        break;
                    }
                    continue;
                }
                for &m in self.g.neighbors(n) {
                    if in_tree.contains_key(&m) {
                        continue;
                    }
                    let nd = d + self.node_cost(m);
                    self.search.relax(m, nd, n, self.tie[m]);
                }
            }
            let sink = reached?;
            let mut path = vec![sink];
            let mut cur = sink;
            while !in_tree.contains_key(&self.search.prev[cur]) {
                cur = self.search.prev[cur];
                path.push(cur);
            }
            let mut parent = in_tree[&self.search.prev[cur]];
            for &n in path.iter().rev() {
                tree.nodes.push(n);
                tree.parent.push(Some(parent));
                parent = tree.nodes.len() - 1;
                in_tree.insert(n, parent);
            }
            remaining.retain(|&s| s != sink);
        }
        Some(tree)
    }

    fn add(&mut self, tree: &RouteTree, delta: i32) {
        for s in tree.segments(self.g) {
            self.occ[s] = (self.occ[s] as i32 + delta) as u32;
        }
    }
}

/// Pin node for every block's tile.
fn block_pins(netlist: &Netlist, placement: &Placement, g: &RoutingGraph) -> Result<Vec<usize>, RouteError> {
    placement
        .sites()
        .iter()
        .enumerate()
        .map(|(b, s)| {
            g.pin_of_tile(s.x, s.y)
                .ok_or_else(|| RouteError::NoPin(netlist.blocks()[b].id.clone()))
        })
        .collect()
}

/// PathFinder-style negotiated congestion routing.
pub fn route(
    netlist: &Netlist,
    placement: &Placement,
    fp: &Floorplan,
    cfg: &RouteConfig,
) -> Result<RoutingResult, RouteError> {
    let g = routing_graph(fp);
    let pins = block_pins(netlist, placement, &g)?;
    let terms: Vec<(usize, Vec<usize>)> = netlist
        .net_pins()
        .iter()
        .map(|p| (pins[p.driver], p.sinks.iter().map(|&s| pins[s]).collect()))
        .collect();

    // larger bounding boxes first, ties by net id
    let bbox = |(d, s): &(usize, Vec<usize>)| {
        let pts: Vec<(usize, usize)> = std::iter::once(d).chain(s).map(|&p| g.pin_tile(p)).collect();
        let (x0, x1) = (pts.iter().map(|p| p.0).min().unwrap(), pts.iter().map(|p| p.0).max().unwrap());
        let (y0, y1) = (pts.iter().map(|p| p.1).min().unwrap(), pts.iter().map(|p| p.1).max().unwrap());
        (x1 - x0) + (y1 - y0)
    };
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by_key(|&i| (Reverse(bbox(&terms[i])), i));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut neg = Negotiator {
        g: &g,
        occ: vec![0; g.n_segments()],
        hist: vec![0.0; g.n_segments()],
        pres_fac: cfg.pres_fac_init,
        tie: (0..g.n_nodes()).map(|_| rng.next_u64()).collect(),
        search: Search::new(g.n_nodes()),
    };
    let mut routes = vec![RouteTree::default(); terms.len()];
    let mut overused_per_iter = Vec::new();
    let mut overflow = true;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters.max(1) {
        iterations += 1;
        for &i in &order {
            let old = std::mem::take(&mut routes[i]);
            neg.add(&old, -1);
            let (d, s) = &terms[i];
            let tree = neg
                .route_net(*d, s)
                .ok_or_else(|| RouteError::Disconnected(netlist.nets()[i].id.clone()))?;
            neg.add(&tree, 1);
            routes[i] = tree;
        }
        let over: Vec<usize> = (0..g.n_segments())
            .filter(|&s| neg.occ[s] > g.capacity(s))
            .collect();
        overused_per_iter.push(over.len());
        if over.is_empty() {
            overflow = false;
            break;
        }
        for s in over {
            neg.hist[s] += cfg.hist_fac * (neg.occ[s] - g.capacity(s)) as f64;
        }
        neg.pres_fac *= cfg.pres_fac_mult;
    }
    Ok(RoutingResult {
        routes,
        iterations,
        overflow,
        overused_per_iter,
    })
}

/// Per-segment `used / capacity`, split into horizontal and vertical grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelUtilization {
    pub cols: usize,
    pub rows: usize,
    /// `(rows + 1) x cols`, index `y * cols + x`.
    pub h: Vec<f32>,
    /// `rows x (cols + 1)`, index `y * (cols + 1) + x`.
    pub v: Vec<f32>,
}

impl ChannelUtilization {
    pub fn zeros(cols: usize, rows: usize) -> Self {
        Self {
            cols,
            rows,
            h: vec![0.0; (rows + 1) * cols],
            v: vec![0.0; rows * (cols + 1)],
        }
    }

    pub fn for_floorplan(fp: &Floorplan) -> Self {
        Self::zeros(fp.cols(), fp.rows())
    }

    pub fn len(&self) -> usize {
        self.h.len() + self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, s: Segment) -> f32 {
        match s.dir {
            Dir::H => self.h[s.y * self.cols + s.x],
            Dir::V => self.v[s.y * (self.cols + 1) + s.x],
        }
    }

    pub fn set(&mut self, s: Segment, u: f32) {
        match s.dir {
            Dir::H => self.h[s.y * self.cols + s.x] = u,
            Dir::V => self.v[s.y * (self.cols + 1) + s.x] = u,
        }
    }

    /// Segments in the same order as [`Floorplan::segment`] indices.
    pub fn segments(&self) -> impl Iterator<Item = (Segment, f32)> + '_ {
        let cols = self.cols;
        let h = self.h.iter().enumerate().map(move |(i, &u)| {
            (Segment { dir: Dir::H, x: i % cols, y: i / cols }, u)
        });
        let v = self.v.iter().enumerate().map(move |(i, &u)| {
            (Segment { dir: Dir::V, x: i % (cols + 1), y: i / (cols + 1) }, u)
        });
        h.chain(v)
    }

    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.h.iter().chain(&self.v).copied()
    }

    pub fn max(&self) -> f32 {
        self.values().fold(0.0, f32::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,x,y,u\n");
        for (seg, u) in self.segments() {
            let k = if seg.dir == Dir::H { 'h' } else { 'v' };
            s.push_str(&format!("{k},{},{},{u:.6}\n", seg.x, seg.y));
        }
        s
    }

    pub fn from_csv(text: &str, cols: usize, rows: usize) -> Result<Self, RouteError> {
        let mut out = Self::zeros(cols, rows);
        let mut seen = 0;
        for (i, line) in text.lines().enumerate() {
            let err = |msg: &str| RouteError::Csv {
                line: i + 1,
                msg: msg.to_string(),
            };
            if i == 0 {
                if line.trim() != "kind,x,y,u" {
                    return Err(err("bad header"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(err("expected 4 fields"));
            }
            let x: usize = f[1].parse().map_err(|_| err("bad x"))?;
            let y: usize = f[2].parse().map_err(|_| err("bad y"))?;
            let u: f32 = f[3].parse().map_err(|_| err("bad u"))?;
            let dir = match f[0] {
                "h" if x < cols && y <= rows => Dir::H,
                "v" if x <= cols && y < rows => Dir::V,
                _ => return Err(err("segment out of range")),
            };
            out.set(Segment { dir, x, y }, u);
            seen += 1;
        }
        if seen != out.len() {
            return Err(RouteError::Csv {
                line: 0,
                msg: format!("expected {} segments, found {seen}", out.len()),
            });
        }
        Ok(out)
    }
}

/// `u = distinct nets through segment / capacity`.
pub fn utilization(result: &RoutingResult, fp: &Floorplan) -> ChannelUtilization {
    let g = routing_graph(fp);
    let occ = result.occupancy(&g);
    let mut u = ChannelUtilization::for_floorplan(fp);
    for (i, &k) in occ.iter().enumerate() {
        u.set(fp.segment(i), k as f32 / g.capacity(i) as f32);
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Mean,
    Max,
    P95,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(ScoreMode::Mean),
            "max" => Ok(ScoreMode::Max),
            "p95" => Ok(ScoreMode::P95),
            other => Err(format!("unknown score mode '{other}'")),
        }
    }
}

/// Inclusive rectangle in tile coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Reduces the utilization of all segments touching `region` (whole
/// floorplan when `None`).
pub fn congestion_score(
    u: &ChannelUtilization,
    region: Option<TileRect>,
    mode: ScoreMode,
) -> Result<f32, RouteError> {
    let (gw, gh) = (u.cols + 2, u.rows + 2);
    let vals: Vec<f32> = match region {
        None => u.values().collect(),
        Some(r) => {
            if r.x0 > r.x1 || r.y0 > r.y1 {
                return Err(RouteError::EmptyRegion);
            }
            if r.x1 >= gw || r.y1 >= gh {
                return Err(RouteError::RegionOutOfBounds);
            }
            u.segments()
                .filter(|(s, _)| {
                    let (x0, y0, x1, y1) = s.tile_span();
                    x0 <= r.x1 && r.x0 <= x1 && y0 <= r.y1 && r.y0 <= y1
                })
                .map(|(_, v)| v)
                .collect()
        }
    };
    if vals.is_empty() {
        return Err(RouteError::EmptyRegion);
    }
    Ok(match mode {
        ScoreMode::Mean => (vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64) as f32,
        ScoreMode::Max => vals.iter().copied().fold(f32::MIN, f32::max),
        ScoreMode::P95 => {
            let mut s = vals;
            s.sort_by(|a, b| a.total_cmp(b));
            let rank = ((0.95 * s.len() as f64).ceil() as usize).max(1);
            s[rank - 1]
        }
    })
}
