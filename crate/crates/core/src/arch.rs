//! Island-style FPGA floorplan and its routing-channel graph.
//!
//! The tile grid is `(cols + 2) x (rows + 2)`: an interior of logic columns
//! surrounded by a ring of IO pads. Tile coordinates run `x` left to right and
//! `y` bottom to top. Routing channels sit between tile rows (horizontal) and
//! tile columns (vertical); each channel is cut into unit-length segments, one
//! per interior tile span.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FLOORPLAN_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchError {
    #[error("invalid floorplan spec: {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("mem_col equals mult_col")]
    ColumnClash,
    #[error("floorplan document: {0}")]
    Document(String),
}

/// Parameters of the island floorplan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FloorplanSpec {
    pub cols: usize,
    pub rows: usize,
    pub mem_col: usize,
    pub mult_col: usize,
    pub channel_capacity: u32,
    pub io_ports_per_pad: u32,
}

impl Default for FloorplanSpec {
    fn default() -> Self {
        Self {
            cols: 8,
            rows: 8,
            mem_col: 2,
            mult_col: 6,
            channel_capacity: 16,
            io_ports_per_pad: 8,
        }
    }
}

impl FloorplanSpec {
    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |field, reason: &str| {
            Err(ArchError::InvalidSpec {
                field,
                reason: reason.to_string(),
            })
        };
        if self.cols < 2 {
            return bad("cols", "must be at least 2");
        }
        if self.rows < 2 {
            return bad("rows", "must be at least 2");
        }
        if self.mem_col >= self.cols {
            return bad("mem_col", "out of range [0, cols)");
        }
        if self.mult_col >= self.cols {
            return bad("mult_col", "out of range [0, cols)");
        }
        if self.mem_col == self.mult_col {
            return Err(ArchError::ColumnClash);
        }
        if self.channel_capacity == 0 {
            return bad("channel_capacity", "must be at least 1");
        }
        if self.io_ports_per_pad == 0 {
            return bad("io_ports_per_pad", "must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TileKind {
    /// Unusable filler at the four corners of the IO ring.
    Corner,
    Io,
    Clb,
    Mem,
    Mult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dir {
    H,
    V,
}

/// One unit-length channel segment.
///
/// Horizontal `(x, y)`: interior column `x`, channel `y` lying between tile
/// rows `y` and `y + 1`. Vertical `(x, y)`: channel `x` lying between tile
/// columns `x` and `x + 1`, interior row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Segment {
    pub dir: Dir,
    pub x: usize,
    pub y: usize,
}

impl Segment {
    /// Inclusive tile-coordinate bounds `(x0, y0, x1, y1)` of the tiles the
    /// segment runs between.
    pub fn tile_span(&self) -> (usize, usize, usize, usize) {
        match self.dir {
            Dir::H => (self.x + 1, self.y, self.x + 1, self.y + 1),
            Dir::V => (self.x, self.y + 1, self.x + 1, self.y + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Floorplan {
    spec: FloorplanSpec,
    tiles: Vec<TileKind>,
}

pub fn build_floorplan(spec: &FloorplanSpec) -> Result<Floorplan, ArchError> {
    spec.validate()?;
    let (w, h) = (spec.cols + 2, spec.rows + 2);
    let mut tiles = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let edge_x = x == 0 || x == w - 1;
            let edge_y = y == 0 || y == h - 1;
            let kind = match (edge_x, edge_y) {
                (true, true) => TileKind::Corner,
                (true, false) | (false, true) => TileKind::Io,
                (false, false) if x - 1 == spec.mem_col => TileKind::Mem,
                (false, false) if x - 1 == spec.mult_col => TileKind::Mult,
                (false, false) => TileKind::Clb,
            };
            tiles.push(kind);
        }
    }
    Ok(Floorplan {
        spec: spec.clone(),
        tiles,
    })
}

impl Floorplan {
    pub fn spec(&self) -> &FloorplanSpec {
        &self.spec
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    /// Tile grid width including the IO ring.
    pub fn width(&self) -> usize {
        self.spec.cols + 2
    }

    pub fn height(&self) -> usize {
        self.spec.rows + 2
    }

    pub fn capacity(&self) -> u32 {
        self.spec.channel_capacity
    }

    pub fn ports_per_pad(&self) -> u32 {
        self.spec.io_ports_per_pad
    }

    pub fn tile(&self, x: usize, y: usize) -> TileKind {
        self.tiles[y * self.width() + x]
    }

    /// All tiles as `(x, y, kind)` in row-major order from the bottom row.
    pub fn tiles(&self) -> impl Iterator<Item = (usize, usize, TileKind)> + '_ {
        let w = self.width();
        self.tiles
            .iter()
            .enumerate()
            .map(move |(i, &k)| (i % w, i / w, k))
    }

    pub fn tiles_of(&self, kind: TileKind) -> Vec<(usize, usize)> {
        self.tiles()
            .filter(|&(_, _, k)| k == kind)
            .map(|(x, y, _)| (x, y))
            .collect()
    }

    /// Tiles on the IO ring, corners included.
    pub fn io_ring_tiles(&self) -> usize {
        self.tiles()
            .filter(|&(_, _, k)| matches!(k, TileKind::Io | TileKind::Corner))
            .count()
    }

    pub fn n_h_segments(&self) -> usize {
        (self.spec.rows + 1) * self.spec.cols
    }

    pub fn n_v_segments(&self) -> usize {
        (self.spec.cols + 1) * self.spec.rows
    }

    pub fn n_segments(&self) -> usize {
        self.n_h_segments() + self.n_v_segments()
    }

    pub fn segment_index(&self, s: Segment) -> usize {
        match s.dir {
            Dir::H => {
                debug_assert!(s.x < self.spec.cols && s.y <= self.spec.rows);
                s.y * self.spec.cols + s.x
            }
            Dir::V => {
                debug_assert!(s.x <= self.spec.cols && s.y < self.spec.rows);
                self.n_h_segments() + s.y * (self.spec.cols + 1) + s.x
            }
        }
    }

    pub fn segment(&self, index: usize) -> Segment {
        let nh = self.n_h_segments();
        if index < nh {
            Segment {
                dir: Dir::H,
                x: index % self.spec.cols,
                y: index / self.spec.cols,
            }
        } else {
            let i = index - nh;
            Segment {
                dir: Dir::V,
                x: i % (self.spec.cols + 1),
                y: i / (self.spec.cols + 1),
            }
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        (0..self.n_segments()).map(|i| self.segment(i))
    }

    /// Channel segments a tile's pin connects to. Empty for corners.
    pub fn tile_segments(&self, x: usize, y: usize) -> Vec<Segment> {
        let (cols, rows) = (self.spec.cols, self.spec.rows);
        let h = |x, y| Segment { dir: Dir::H, x, y };
        let v = |x, y| Segment { dir: Dir::V, x, y };
        match self.tile(x, y) {
            TileKind::Corner => Vec::new(),
            TileKind::Io => {
                if y == 0 {
                    vec![h(x - 1, 0)]
                } else if y == rows + 1 {
                    vec![h(x - 1, rows)]
                } else if x == 0 {
                    vec![v(0, y - 1)]
                } else {
                    vec![v(cols, y - 1)]
                }
            }
            _ => vec![h(x - 1, y - 1), h(x - 1, y), v(x - 1, y - 1), v(x, y - 1)],
        }
    }

    /// Segments meeting at switch point `(x, y)`, `x in 0..=cols`, `y in 0..=rows`.
    pub fn switch_segments(&self, x: usize, y: usize) -> Vec<Segment> {
        let (cols, rows) = (self.spec.cols, self.spec.rows);
        let mut out = Vec::with_capacity(4);
        if x >= 1 {
            out.push(Segment { dir: Dir::H, x: x - 1, y });
        }
        if x < cols {
            out.push(Segment { dir: Dir::H, x, y });
        }
        if y >= 1 {
            out.push(Segment { dir: Dir::V, x, y: y - 1 });
        }
        if y < rows {
            out.push(Segment { dir: Dir::V, x, y });
        }
        out
    }

    pub fn to_json(&self) -> String {
        let doc = FloorplanDoc {
            version: FLOORPLAN_VERSION,
            spec: self.spec.clone(),
            grid_width: self.width(),
            grid_height: self.height(),
            h_segments: self.n_h_segments(),
            v_segments: self.n_v_segments(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("floorplan doc serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Floorplan, ArchError> {
        let doc: FloorplanDoc =
            serde_json::from_str(text).map_err(|e| ArchError::Document(e.to_string()))?;
        if doc.version != FLOORPLAN_VERSION {
            return Err(ArchError::Document(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        let fp = build_floorplan(&doc.spec)?;
        if fp.width() != doc.grid_width || fp.height() != doc.grid_height {
            return Err(ArchError::Document(
                "grid dims disagree with spec".to_string(),
            ));
        }
        Ok(fp)
    }
}

#[derive(Serialize, Deserialize)]
struct FloorplanDoc {
    version: u32,
    spec: FloorplanSpec,
    grid_width: usize,
    grid_height: usize,
    h_segments: usize,
    v_segments: usize,
}

/// Channel segments plus one pin node per usable tile.
///
/// Node ids `0..n_segments` are segments (same indexing as
/// [`Floorplan::segment_index`]); pins follow.
#[derive(Debug, Clone)]
pub struct RoutingGraph {
    n_segments: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    capacity: Vec<u32>,
    pin_tiles: Vec<(usize, usize)>,
    tile_pin: Vec<Option<usize>>,
    grid_width: usize,
}

pub fn routing_graph(fp: &Floorplan) -> RoutingGraph {
    let n_seg = fp.n_segments();
    let mut pin_tiles = Vec::new();
    let mut tile_pin = vec![None; fp.width() * fp.height()];
    for (x, y, kind) in fp.tiles() {
        if kind != TileKind::Corner {
            tile_pin[y * fp.width() + x] = Some(n_seg + pin_tiles.len());
            pin_tiles.push((x, y));
        }
    }
    let n = n_seg + pin_tiles.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut link = |a: usize, b: usize| {
        adj[a].push(b);
        adj[b].push(a);
    };
    for sx in 0..=fp.cols() {
        for sy in 0..=fp.rows() {
            let segs: Vec<usize> = fp
                .switch_segments(sx, sy)
                .into_iter()
                .map(|s| fp.segment_index(s))
                .collect();
            for i in 0..segs.len() {
                for j in i + 1..segs.len() {
                    link(segs[i], segs[j]);
                }
            }
        }
    }
    for (p, &(x, y)) in pin_tiles.iter().enumerate() {
        for s in fp.tile_segments(x, y) {
            link(n_seg + p, fp.segment_index(s));
        }
    }
    let mut offsets = Vec::with_capacity(n + 1);
    let mut targets = Vec::new();
    offsets.push(0);
    for mut list in adj {
        list.sort_unstable();
        targets.extend(list);
        offsets.push(targets.len());
    }
    RoutingGraph {
        n_segments: n_seg,
        offsets,
        targets,
        capacity: vec![fp.capacity(); n_seg],
        pin_tiles,
        tile_pin,
        grid_width: fp.width(),
    }
}

impl RoutingGraph {
    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_pins(&self) -> usize {
        self.pin_tiles.len()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn is_segment(&self, node: usize) -> bool {
        node < self.n_segments
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn capacity(&self, segment: usize) -> u32 {
        self.capacity[segment]
    }

    pub fn pin_of_tile(&self, x: usize, y: usize) -> Option<usize> {
        self.tile_pin[y * self.grid_width + x]
    }

    pub fn pin_tile(&self, pin: usize) -> (usize, usize) {
        self.pin_tiles[pin - self.n_segments]
    }

    pub fn pins(&self) -> std::ops::Range<usize> {
        self.n_segments..self.n_nodes()
    }
}

/// Closed-form segment-to-segment edge count for a `cols x rows` interior.
pub fn switch_edge_count(cols: usize, rows: usize) -> usize {
    4 + 6 * (cols - 1) + 6 * (rows - 1) + 6 * (cols - 1) * (rows - 1)
}

/// Closed-form pin-to-segment edge count.
pub fn pin_edge_count(cols: usize, rows: usize) -> usize {
    4 * cols * rows + 2 * cols + 2 * rows
}
