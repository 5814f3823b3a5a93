//! Simulated-annealing placement with a half-perimeter wirelength objective.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{Floorplan, TileKind};
use crate::netlist::{BlockKind, Netlist};

#[derive(Debug, Error, PartialEq)]
pub enum PlaceError {
    #[error("insufficient {0} sites")]
    InsufficientSites(SiteClass),
    #[error("empty sweep axis")]
    EmptySweepAxis,
    #[error("invalid anneal schedule: {0}")]
    Schedule(String),
    #[error("illegal placement: {0}")]
    Illegal(String),
    #[error("placement file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Which tiles a block may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteClass {
    Clb,
    Io,
    Mem,
    Mult,
}

impl SiteClass {
    pub fn of(kind: BlockKind) -> SiteClass {
        match kind {
            BlockKind::Clb => SiteClass::Clb,
            BlockKind::Inpad | BlockKind::Outpad => SiteClass::Io,
            BlockKind::Mem => SiteClass::Mem,
            BlockKind::Mult => SiteClass::Mult,
        }
    }

    fn tile(self) -> TileKind {
        match self {
            SiteClass::Clb => TileKind::Clb,
            SiteClass::Io => TileKind::Io,
            SiteClass::Mem => TileKind::Mem,
            SiteClass::Mult => TileKind::Mult,
        }
    }

    const ALL: [SiteClass; 4] = [SiteClass::Clb, SiteClass::Io, SiteClass::Mem, SiteClass::Mult];
}

impl fmt::Display for SiteClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SiteClass::Clb => "CLB",
            SiteClass::Io => "IO",
            SiteClass::Mem => "MEM",
            SiteClass::Mult => "MULT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub x: usize,
    pub y: usize,
    /// Port index on IO tiles, 0 elsewhere.
    pub subtile: u32,
}

/// Block index to site, parallel to [`Netlist::blocks`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Placement {
    sites: Vec<Site>,
}

impl Placement {
    pub fn from_sites(sites: Vec<Site>) -> Placement {
        Placement { sites }
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, block: usize) -> Site {
        self.sites[block]
    }

    /// Checks kind compatibility and per-site exclusivity.
    pub fn validate(&self, netlist: &Netlist, fp: &Floorplan) -> Result<(), PlaceError> {
        if self.sites.len() != netlist.blocks().len() {
            return Err(PlaceError::Illegal(format!(
                "{} sites for {} blocks",
                self.sites.len(),
                netlist.blocks().len()
            )));
        }
        let mut taken = HashMap::new();
        for (b, s) in self.sites.iter().enumerate() {
            let block = &netlist.blocks()[b];
            let class = SiteClass::of(block.kind);
            if s.x >= fp.width() || s.y >= fp.height() || fp.tile(s.x, s.y) != class.tile() {
                return Err(PlaceError::Illegal(format!(
                    "block {} on incompatible tile ({}, {})",
                    block.id, s.x, s.y
                )));
            }
            let max_sub = if class == SiteClass::Io {
                fp.ports_per_pad()
            } else {
                1
            };
            if s.subtile >= max_sub {
                return Err(PlaceError::Illegal(format!(
                    "block {} subtile {} out of range",
                    block.id, s.subtile
                )));
            }
            if let Some(other) = taken.insert(*s, b) {
                return Err(PlaceError::Illegal(format!(
                    "blocks {} and {} share a site",
                    netlist.blocks()[other].id,
                    block.id
                )));
            }
        }
        Ok(())
    }

    /// Placement file body, one `<block_id> <x> <y> <subtile>` line per block
    /// after the given header comments.
    pub fn to_text(&self, netlist: &Netlist, header: &[String]) -> String {
        let mut s = String::new();
        for h in header {
            s.push_str("# ");
            s.push_str(h);
            s.push('\n');
        }
        for (b, site) in netlist.blocks().iter().zip(&self.sites) {
            s.push_str(&format!("{} {} {} {}\n", b.id, site.x, site.y, site.subtile));
        }
        s
    }

    pub fn from_text(text: &str, netlist: &Netlist, fp: &Floorplan) -> Result<Placement, PlaceError> {
        let mut sites: Vec<Option<Site>> = vec![None; netlist.blocks().len()];
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            let err = |msg: String| PlaceError::Parse { line, msg };
            if toks.len() != 4 {
                return Err(err("expected '<block_id> <x> <y> <subtile>'".into()));
            }
            let b = netlist
                .block_index(toks[0])
                .ok_or_else(|| err(format!("unknown block '{}'", toks[0])))?;
            let num = |t: &str| t.parse::<usize>().map_err(|e| err(e.to_string()));
            let site = Site {
                x: num(toks[1])?,
                y: num(toks[2])?,
                subtile: num(toks[3])? as u32,
            };
            if sites[b].replace(site).is_some() {
                return Err(err(format!("block '{}' placed twice", toks[0])));
            }
        }
        let sites = sites
            .into_iter()
            .enumerate()
            .map(|(b, s)| {
                s.ok_or_else(|| {
                    PlaceError::Illegal(format!("block {} unplaced", netlist.blocks()[b].id))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let p = Placement { sites };
        p.validate(netlist, fp)?;
        Ok(p)
    }
}

fn class_sites(fp: &Floorplan, class: SiteClass) -> Vec<Site> {
    let ports = if class == SiteClass::Io {
        fp.ports_per_pad()
    } else {
        1
    };
    let mut out = Vec::new();
    for (x, y) in fp.tiles_of(class.tile()) {
        for subtile in 0..ports {
            out.push(Site { x, y, subtile });
        }
    }
    out
}

pub fn random_placement(netlist: &Netlist, fp: &Floorplan, seed: u64) -> Result<Placement, PlaceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_placement_with(netlist, fp, &mut rng)
}

fn random_placement_with(
    netlist: &Netlist,
    fp: &Floorplan,
    rng: &mut ChaCha8Rng,
) -> Result<Placement, PlaceError> {
    let mut sites = vec![Site { x: 0, y: 0, subtile: 0 }; netlist.blocks().len()];
    for class in SiteClass::ALL {
        let blocks: Vec<usize> = netlist
            .blocks()
            .iter()
            .enumerate()
            .filter(|(_, b)| SiteClass::of(b.kind) == class)
            .map(|(i, _)| i)
            .collect();
        let mut pool = class_sites(fp, class);
        if blocks.len() > pool.len() {
            return Err(PlaceError::InsufficientSites(class));
        }
        pool.shuffle(rng);
        for (b, s) in blocks.into_iter().zip(pool) {
            sites[b] = s;
        }
    }
    Ok(Placement { sites })
}

fn net_hpwl(terminals: impl Iterator<Item = Site>) -> f64 {
    let mut lo = (usize::MAX, usize::MAX);
    let mut hi = (0usize, 0usize);
    for s in terminals {
        lo = (lo.0.min(s.x), lo.1.min(s.y));
        hi = (hi.0.max(s.x), hi.1.max(s.y));
    }
    ((hi.0 - lo.0) + (hi.1 - lo.1)) as f64
}

/// Sum over nets of the half-perimeter of the terminals' tile bounding box.
pub fn bbox_cost(netlist: &Netlist, placement: &Placement) -> f64 {
    netlist
        .net_pins()
        .iter()
        .map(|p| {
            net_hpwl(std::iter::once(p.driver).chain(p.sinks.iter().copied()).map(|b| placement.sites[b]))
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceAlgorithm {
    BoundingBox,
}

impl fmt::Display for PlaceAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("bounding_box")
    }
}

impl std::str::FromStr for PlaceAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bounding_box" => Ok(PlaceAlgorithm::BoundingBox),
            other => Err(format!("unsupported place algorithm '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub seed: u64,
    pub alpha_t: f64,
    pub inner_num: f64,
    pub algorithm: PlaceAlgorithm,
    pub t_init_factor: f64,
    pub exit_t: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            seed: 1,
            alpha_t: 0.8,
            inner_num: 1.0,
            algorithm: PlaceAlgorithm::BoundingBox,
            t_init_factor: 20.0,
            exit_t: 0.005,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<(), PlaceError> {
        let bad = |m: &str| Err(PlaceError::Schedule(m.to_string()));
        if !(self.alpha_t > 0.0 && self.alpha_t < 1.0) {
            return bad("alpha_t must lie in (0, 1)");
        }
        if !(self.inner_num > 0.0) {
            return bad("inner_num must be positive");
        }
        if !(self.exit_t > 0.0) {
            return bad("exit_t must be positive");
        }
        if !(self.t_init_factor >= 0.0) {
            return bad("t_init_factor must be non-negative");
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "seed={} alpha_t={} inner_num={} algorithm={}",
            self.seed, self.alpha_t, self.inner_num, self.algorithm
        )
    }
}

/// Metropolis acceptance for a cost change `delta` at `temperature` given a
/// uniform draw `r` in `[0, 1)`.
pub fn metropolis_accept(delta: f64, temperature: f64, r: f64) -> bool {
    delta <= 0.0 || (temperature > 0.0 && r < (-delta / temperature).exp())
}

const RANGE_TARGET: f64 = 0.44;
const WARMUP_MOVES: usize = 50;
const MAX_LEVELS: usize = 100_000;
const SITE_TRIES: usize = 64;

#[derive(Debug, Clone)]
pub struct AnnealResult {
    pub placement: Placement,
    pub snapshots: Vec<Placement>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub levels: usize,
    pub accepted_moves: usize,
}

struct Annealer<'a> {
    netlist: &'a Netlist,
    block_nets: Vec<Vec<usize>>,
    class_of: Vec<SiteClass>,
    pools: HashMap<SiteClass, Vec<Site>>,
    occ: HashMap<Site, usize>,
    sites: Vec<Site>,
    net_cost: Vec<f64>,
    cost: f64,
    stamp: Vec<u32>,
    epoch: u32,
    touched: Vec<usize>,
    new_cost: Vec<f64>,
}

impl<'a> Annealer<'a> {
    fn new(netlist: &'a Netlist, fp: &Floorplan, p: &Placement) -> Self {
        let class_of: Vec<SiteClass> = netlist.blocks().iter().map(|b| SiteClass::of(b.kind)).collect();
        let pools = SiteClass::ALL
            .iter()
            .map(|&c| (c, class_sites(fp, c)))
            .collect();
        let occ = p.sites.iter().enumerate().map(|(b, &s)| (s, b)).collect();
        let n_nets = netlist.nets().len();
        let mut a = Annealer {
            netlist,
            block_nets: netlist.block_nets(),
            class_of,
            pools,
            occ,
            sites: p.sites.clone(),
            net_cost: vec![0.0; n_nets],
            cost: 0.0,
            stamp: vec![0; n_nets],
            epoch: 0,
            touched: Vec::new(),
            new_cost: vec![0.0; n_nets],
        };
        for n in 0..n_nets {
            a.net_cost[n] = a.hpwl(n);
        }
        a.cost = a.net_cost.iter().sum();
        a
    }

    fn hpwl(&self, net: usize) -> f64 {
        let p = &self.netlist.net_pins()[net];
        net_hpwl(std::iter::once(p.driver).chain(p.sinks.iter().copied()).map(|b| self.sites[b]))
    }

    fn pick_target(&self, rng: &mut ChaCha8Rng, block: usize, rlim: f64) -> Option<Site> {
        let pool = &self.pools[&self.class_of[block]];
        let at = self.sites[block];
        let r = rlim.max(1.0);
        for _ in 0..SITE_TRIES {
            let s = pool[rng.gen_range(0..pool.len())];
            if s != at && (s.x as f64 - at.x as f64).abs() <= r && (s.y as f64 - at.y as f64).abs() <= r {
                return Some(s);
            }
        }
        None
    }

    fn place(&mut self, block: usize, site: Site) {
        self.sites[block] = site;
        self.occ.insert(site, block);
    }

    /// Applies a swap/relocation and returns the cost delta; the move can be
    /// undone with [`Annealer::revert`].
    fn apply(&mut self, block: usize, target: Site) -> (f64, Site, Option<usize>) {
        let from = self.sites[block];
        let other = self.occ.get(&target).copied();
        self.occ.remove(&from);
        self.place(block, target);
        if let Some(o) = other {
            self.place(o, from);
        }
        self.epoch += 1;
        self.touched.clear();
        let mut delta = 0.0;
        for &b in std::iter::once(&block).chain(other.as_ref()) {
            for &n in &self.block_nets[b] {
                if self.stamp[n] != self.epoch {
                    self.stamp[n] = self.epoch;
                    self.touched.push(n);
                }
            }
        }
        for i in 0..self.touched.len() {
            let n = self.touched[i];
            let c = self.hpwl(n);
            self.new_cost[n] = c;
            delta += c - self.net_cost[n];
        }
        (delta, from, other)
    }

    fn commit(&mut self, delta: f64) {
        for &n in &self.touched {
            self.net_cost[n] = self.new_cost[n];
        }
        self.cost += delta;
    }

    fn revert(&mut self, block: usize, from: Site, other: Option<usize>) {
        let target = self.sites[block];
        self.occ.remove(&target);
        if let Some(o) = other {
            self.occ.remove(&from);
            self.place(o, target);
        }
        self.place(block, from);
    }

    fn placement(&self) -> Placement {
        Placement {
            sites: self.sites.clone(),
        }
    }

    fn recompute_cost(&mut self) {
        // drop accumulated float drift
        for n in 0..self.net_cost.len() {
            self.net_cost[n] = self.hpwl(n);
        }
        self.cost = self.net_cost.iter().sum();
    }
}

/// Anneals from a seeded random placement.
///
/// `snapshot_every > 0` records the initial state, the state after every
/// `snapshot_every`-th accepted move, and the returned final state.
pub fn anneal(
    netlist: &Netlist,
    fp: &Floorplan,
    schedule: &AnnealSchedule,
    snapshot_every: usize,
) -> Result<AnnealResult, PlaceError> {
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let initial = random_placement_with(netlist, fp, &mut rng)?;
    let mut ann = Annealer::new(netlist, fp, &initial);
    let initial_cost = ann.cost;
    let n_blocks = netlist.blocks().len();
    let n_nets = netlist.nets().len();
    let mut snapshots = Vec::new();
    if snapshot_every > 0 {
        snapshots.push(initial.clone());
    }
    let rlim_max = fp.width().max(fp.height()) as f64;
    let moves_per_level = ((schedule.inner_num * (n_blocks as f64).powf(4.0 / 3.0)).round() as usize).max(1);

    // initial temperature from the spread of costs over unconditional moves
    let mut temperature = {
        let mut probe = Annealer::new(netlist, fp, &initial);
        let mut costs = Vec::with_capacity(WARMUP_MOVES);
        for _ in 0..WARMUP_MOVES {
            let b = rng.gen_range(0..n_blocks);
            if let Some(t) = probe.pick_target(&mut rng, b, rlim_max) {
                let (d, _, _) = probe.apply(b, t);
                probe.commit(d);
            }
            costs.push(probe.cost);
        }
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / costs.len() as f64;
        schedule.t_init_factor * var.sqrt()
    };

    let mut rlim = rlim_max;
    let mut best = (initial_cost, initial.clone());
    let mut accepted_total = 0usize;
    let mut levels = 0usize;
    let run_level = |ann: &mut Annealer, rng: &mut ChaCha8Rng, t: f64, rlim: f64, snaps: &mut Vec<Placement>, accepted_total: &mut usize| {
        let mut accepted = 0usize;
        for _ in 0..moves_per_level {
            let b = rng.gen_range(0..n_blocks);
            let Some(target) = ann.pick_target(rng, b, rlim) else {
                continue;
            };
            let (delta, from, other) = ann.apply(b, target);
            if metropolis_accept(delta, t, rng.gen::<f64>()) {
                ann.commit(delta);
                accepted += 1;
                *accepted_total += 1;
                if snapshot_every > 0 && (*accepted_total).is_multiple_of(snapshot_every) {
                    snaps.push(ann.placement());
                }
            } else {
                ann.revert(b, from, other);
            }
        }
        accepted as f64 / moves_per_level as f64
    };

    while n_nets > 0 && ann.cost > 0.0 && levels < MAX_LEVELS {
        if temperature < schedule.exit_t * ann.cost / n_nets as f64 {
            break;
        }
        let rate = run_level(&mut ann, &mut rng, temperature, rlim, &mut snapshots, &mut accepted_total);
        levels += 1;
        ann.recompute_cost();
        if ann.cost < best.0 {
            best = (ann.cost, ann.placement());
        }
        rlim = (rlim * (1.0 - RANGE_TARGET + rate)).clamp(1.0, rlim_max);
        temperature *= schedule.alpha_t;
    }
    if n_nets > 0 && ann.cost > 0.0 {
        // greedy quench
        run_level(&mut ann, &mut rng, 0.0, rlim, &mut snapshots, &mut accepted_total);
        ann.recompute_cost();
        levels += 1;
    }
    let (placement, final_cost) = if ann.cost <= best.0 {
        (ann.placement(), ann.cost)
    } else {
        (best.1, best.0)
    };
    if snapshot_every > 0 && snapshots.last() != Some(&placement) {
        snapshots.push(placement.clone());
    }
    Ok(AnnealResult {
        placement,
        snapshots,
        initial_cost,
        final_cost,
        levels,
        accepted_moves: accepted_total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub seeds: Vec<u64>,
    pub alpha_ts: Vec<f64>,
    pub inner_nums: Vec<f64>,
    pub algorithms: Vec<PlaceAlgorithm>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            seeds: (1..=10).collect(),
            alpha_ts: vec![0.5, 0.7, 0.8, 0.9, 0.95],
            inner_nums: vec![0.5, 1.0, 2.0, 10.0],
            algorithms: vec![PlaceAlgorithm::BoundingBox],
        }
    }
}

impl SweepGrid {
    /// Grid points in cartesian order, seeds outermost.
    pub fn schedules(&self, base: &AnnealSchedule) -> Result<Vec<AnnealSchedule>, PlaceError> {
        if self.seeds.is_empty()
            || self.alpha_ts.is_empty()
            || self.inner_nums.is_empty()
            || self.algorithms.is_empty()
        {
            return Err(PlaceError::EmptySweepAxis);
        }
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &alpha_t in &self.alpha_ts {
                for &inner_num in &self.inner_nums {
                    for &algorithm in &self.algorithms {
                        out.push(AnnealSchedule {
                            seed,
                            alpha_t,
                            inner_num,
                            algorithm,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.seeds.len() * self.alpha_ts.len() * self.inner_nums.len() * self.algorithms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anneals every grid point; output order matches [`SweepGrid::schedules`].
pub fn sweep(
    netlist: &Netlist,
    fp: &Floorplan,
    grid: &SweepGrid,
    base: &AnnealSchedule,
) -> Result<Vec<(AnnealSchedule, Placement)>, PlaceError> {
    grid.schedules(base)?
        .into_par_iter()
        .map(|s| {
            let r = anneal(netlist, fp, &s, 0)?;
            Ok((s, r.placement))
        })
        .collect()
}
