//! Packed netlist: blocks and multi-terminal nets.
//!
//! Text format, one record per line, `#` starts a comment:
//!
//! ```text
//! block <id> <CLB|INPAD|OUTPAD|MEM|MULT>
//! net <id> <driver> <sink>+
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockKind {
    Clb,
    Inpad,
    Outpad,
    Mem,
    Mult,
}

impl BlockKind {
    pub fn is_io(self) -> bool {
        matches!(self, BlockKind::Inpad | BlockKind::Outpad)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Clb => "CLB",
            BlockKind::Inpad => "INPAD",
            BlockKind::Outpad => "OUTPAD",
            BlockKind::Mem => "MEM",
            BlockKind::Mult => "MULT",
        })
    }
}

impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "CLB" => BlockKind::Clb,
            "INPAD" => BlockKind::Inpad,
            "OUTPAD" => BlockKind::Outpad,
            "MEM" => BlockKind::Mem,
            "MULT" => BlockKind::Mult,
            other => return Err(format!("unknown block kind '{other}'")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: String,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    pub id: String,
    pub driver: String,
    pub sinks: Vec<String>,
}

/// A single invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    DuplicateBlock(String),
    DuplicateNet(String),
    UnknownBlock { net: String, block: String },
    NoSinks(String),
    SelfLoop(String),
    DuplicateSink { net: String, block: String },
    UndrivenInpad(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "netlist has no blocks"),
            Violation::DuplicateBlock(id) => write!(f, "duplicate id '{id}'"),
            Violation::DuplicateNet(id) => write!(f, "duplicate net id '{id}'"),
            Violation::UnknownBlock { net, block } => {
                write!(f, "net {net}: unknown block '{block}'")
            }
            Violation::NoSinks(id) => write!(f, "net {id} has no sinks"),
            Violation::SelfLoop(id) => write!(f, "self-loop net {id}"),
            Violation::DuplicateSink { net, block } => {
                write!(f, "net {net}: duplicate sink '{block}'")
            }
            Violation::UndrivenInpad(id) => write!(f, "INPAD '{id}' drives no net"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetlistError {
    #[error("syntax error at line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate block id '{id}' at line {line}")]
    DuplicateBlock { id: String, line: usize },
    #[error("unknown block '{id}' at line {line}")]
    UnknownBlock { id: String, line: usize },
    #[error("invalid netlist: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("infeasible generator parameters: {0}")]
    Params(String),
}

/// Resolved terminals of one net, as block indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetPins {
    pub driver: usize,
    pub sinks: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetlistStats {
    pub n_clb: usize,
    pub n_inpad: usize,
    pub n_outpad: usize,
    pub n_mem: usize,
    pub n_mult: usize,
    pub n_nets: usize,
    pub n_sinks: usize,
}

/// Validated netlist in canonical order (blocks and nets sorted by id).
#[derive(Debug, Clone)]
pub struct Netlist {
    blocks: Vec<Block>,
    nets: Vec<Net>,
    index: HashMap<String, usize>,
    pins: Vec<NetPins>,
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks && self.nets == other.nets
    }
}

impl Eq for Netlist {}

/// Checks every netlist invariant; an empty result means valid.
pub fn validate(blocks: &[Block], nets: &[Net]) -> Vec<Violation> {
    let mut out = Vec::new();
    if blocks.is_empty() {
        out.push(Violation::Empty);
    }
    let mut kinds: HashMap<&str, BlockKind> = HashMap::new();
    for b in blocks {
        if kinds.insert(&b.id, b.kind).is_some() {
            out.push(Violation::DuplicateBlock(b.id.clone()));
        }
    }
    let mut net_ids = HashSet::new();
    let mut drivers = HashSet::new();
    for n in nets {
        if !net_ids.insert(n.id.as_str()) {
            out.push(Violation::DuplicateNet(n.id.clone()));
        }
        for id in std::iter::once(&n.driver).chain(&n.sinks) {
            if !kinds.contains_key(id.as_str()) {
                out.push(Violation::UnknownBlock {
                    net: n.id.clone(),
                    block: id.clone(),
                });
            }
        }
        if n.sinks.is_empty() {
            out.push(Violation::NoSinks(n.id.clone()));
        }
        if n.sinks.contains(&n.driver) {
            out.push(Violation::SelfLoop(n.id.clone()));
        }
        let mut seen = HashSet::new();
        for s in &n.sinks {
            if !seen.insert(s.as_str()) && *s != n.driver {
                out.push(Violation::DuplicateSink {
                    net: n.id.clone(),
                    block: s.clone(),
                });
            }
        }
        drivers.insert(n.driver.as_str());
    }
    for b in blocks {
        if b.kind == BlockKind::Inpad && !drivers.contains(b.id.as_str()) {
            out.push(Violation::UndrivenInpad(b.id.clone()));
        }
    }
    out
}

impl Netlist {
    pub fn new(mut blocks: Vec<Block>, mut nets: Vec<Net>) -> Result<Netlist, NetlistError> {
        let report = validate(&blocks, &nets);
        if !report.is_empty() {
            return Err(NetlistError::Invalid(report));
        }
        blocks.sort_by(|a, b| a.id.cmp(&b.id));
        nets.sort_by(|a, b| a.id.cmp(&b.id));
        let index: HashMap<String, usize> = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.clone(), i))
            .collect();
        let pins = nets
            .iter()
            .map(|n| NetPins {
                driver: index[&n.driver],
                sinks: n.sinks.iter().map(|s| index[s]).collect(),
            })
            .collect();
        Ok(Netlist {
            blocks,
            nets,
            index,
            pins,
        })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    /// Terminals of every net, parallel to [`Netlist::nets`].
    pub fn net_pins(&self) -> &[NetPins] {
        &self.pins
    }

    pub fn block_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn stats(&self) -> NetlistStats {
        let mut s = NetlistStats {
            n_nets: self.nets.len(),
            n_sinks: self.nets.iter().map(|n| n.sinks.len()).sum(),
            ..Default::default()
        };
        for b in &self.blocks {
            match b.kind {
                BlockKind::Clb => s.n_clb += 1,
                BlockKind::Inpad => s.n_inpad += 1,
                BlockKind::Outpad => s.n_outpad += 1,
                BlockKind::Mem => s.n_mem += 1,
                BlockKind::Mult => s.n_mult += 1,
            }
        }
        s
    }

    /// Nets touching each block, by net index.
    pub fn block_nets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.blocks.len()];
        for (ni, p) in self.pins.iter().enumerate() {
            for &b in std::iter::once(&p.driver).chain(&p.sinks) {
                if out[b].last() != Some(&ni) {
                    out[b].push(ni);
                }
            }
        }
        out
    }

    /// Canonical text form.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for b in &self.blocks {
            s.push_str(&format!("block {} {}\n", b.id, b.kind));
        }
        for n in &self.nets {
            s.push_str(&format!("net {} {}", n.id, n.driver));
            for k in &n.sinks {
                s.push(' ');
                s.push_str(k);
            }
            s.push('\n');
        }
        s
    }
}

pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let mut blocks = Vec::new();
    let mut block_line: HashMap<String, usize> = HashMap::new();
    let mut nets = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        match toks.first() {
            None => {}
            Some(&"block") => {
                if toks.len() != 3 {
                    return Err(NetlistError::Syntax {
                        line,
                        msg: "expected 'block <id> <KIND>'".into(),
                    });
                }
                let kind = toks[2]
                    .parse::<BlockKind>()
                    .map_err(|msg| NetlistError::Syntax { line, msg })?;
                if block_line.insert(toks[1].to_string(), line).is_some() {
                    return Err(NetlistError::DuplicateBlock {
                        id: toks[1].to_string(),
                        line,
                    });
                }
                blocks.push(Block {
                    id: toks[1].to_string(),
                    kind,
                });
            }
            Some(&"net") => {
                if toks.len() < 4 {
                    return Err(NetlistError::Syntax {
                        line,
                        msg: "expected 'net <id> <driver> <sink>+'".into(),
                    });
                }
                nets.push((
                    line,
                    Net {
                        id: toks[1].to_string(),
                        driver: toks[2].to_string(),
                        sinks: toks[3..].iter().map(|s| s.to_string()).collect(),
                    },
                ));
            }
            Some(other) => {
                return Err(NetlistError::Syntax {
                    line,
                    msg: format!("unknown record '{other}'"),
                })
            }
        }
    }
    for (line, n) in &nets {
        for id in std::iter::once(&n.driver).chain(&n.sinks) {
            if !block_line.contains_key(id) {
                return Err(NetlistError::UnknownBlock {
                    id: id.clone(),
                    line: *line,
                });
            }
        }
    }
    Netlist::new(blocks, nets.into_iter().map(|(_, n)| n).collect())
}

/// Knobs for the synthetic netlist generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_clb: usize,
    pub n_io_in: usize,
    pub n_io_out: usize,
    pub n_mem: usize,
    pub n_mult: usize,
    pub avg_fanout: f64,
    pub rent_exponent: f64,
    /// Nets driven per CLB on average.
    pub nets_per_clb: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_clb: 40,
            n_io_in: 16,
            n_io_out: 8,
            n_mem: 4,
            n_mult: 4,
            avg_fanout: 3.0,
            rent_exponent: 0.6,
            nets_per_clb: 3.6,
        }
    }
}

impl SyntheticParams {
    fn check(&self) -> Result<(), NetlistError> {
        let bad = |m: &str| Err(NetlistError::Params(m.to_string()));
        if self.n_clb == 0 {
            return bad("n_clb must be at least 1");
        }
        if !(self.avg_fanout >= 1.0) {
            return bad("avg_fanout must be at least 1");
        }
        if !(self.rent_exponent > 0.0 && self.rent_exponent <= 1.0) {
            return bad("rent_exponent must lie in (0, 1]");
        }
        if !(self.nets_per_clb >= 0.0) {
            return bad("nets_per_clb must be non-negative");
        }
        Ok(())
    }
}

/// Seeded synthetic netlist with Rent-style locality.
///
/// Logic blocks are laid out on the leaves of a recursive bipartition. Each
/// sink is taken from the sibling half at a partition level reached by
/// climbing one level at a time with probability `2^(rent_exponent - 1)`.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<Netlist, NetlistError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut push = |prefix: &str, width: usize, n: usize, kind: BlockKind| {
        (0..n)
            .map(|i| {
                let id = format!("{prefix}{i:0width$}");
                blocks.push(Block {
                    id: id.clone(),
                    kind,
                });
                id
            })
            .collect::<Vec<_>>()
    };
    let inpads = push("i", 4, params.n_io_in, BlockKind::Inpad);
    let outpads = push("o", 4, params.n_io_out, BlockKind::Outpad);
    let clbs = push("c", 5, params.n_clb, BlockKind::Clb);
    let mems = push("m", 3, params.n_mem, BlockKind::Mem);
    let mults = push("x", 3, params.n_mult, BlockKind::Mult);

    let mut logic: Vec<String> = clbs.iter().chain(&mems).chain(&mults).cloned().collect();
    logic.shuffle(&mut rng);
    let pos: HashMap<&str, usize> = logic
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let escape = 2f64.powf(params.rent_exponent - 1.0);
    let fanout_q = 1.0 / params.avg_fanout;

    let mut nets: Vec<Net> = Vec::new();
    let mut next_id = 0usize;
    let mut new_net = |driver: String, sinks: Vec<String>, nets: &mut Vec<Net>| {
        nets.push(Net {
            id: format!("n{next_id:06}"),
            driver,
            sinks,
        });
        next_id += 1;
    };

    let n_clb_nets = (params.nets_per_clb * params.n_clb as f64).round() as usize;
    let mut drivers: Vec<String> = Vec::new();
    for k in 0..n_clb_nets {
        if k < clbs.len() {
            drivers.push(clbs[k].clone());
        } else {
            drivers.push(clbs[rng.gen_range(0..clbs.len())].clone());
        }
    }
    for b in mems.iter().chain(&mults) {
        drivers.push(b.clone());
        drivers.push(b.clone());
    }
    for d in drivers {
        let k = sample_fanout(&mut rng, fanout_q);
        let sinks = if logic.len() > 1 {
            local_sinks(&mut rng, &logic, pos[d.as_str()], k, escape)
        } else if !outpads.is_empty() {
            vec![outpads[rng.gen_range(0..outpads.len())].clone()]
        } else {
            continue;
        };
        new_net(d, sinks, &mut nets);
    }
    let logic_nets = nets.len();
    for d in &inpads {
        let k = sample_fanout(&mut rng, fanout_q).min(logic.len());
        let mut pool = logic.clone();
        pool.shuffle(&mut rng);
        pool.truncate(k);
        new_net(d.clone(), pool, &mut nets);
    }
    for o in &outpads {
        let candidates: Vec<usize> = (0..logic_nets)
            .filter(|&i| !nets[i].sinks.contains(o))
            .collect();
        if candidates.is_empty() {
            let d = logic[rng.gen_range(0..logic.len())].clone();
            new_net(d, vec![o.clone()], &mut nets);
        } else {
            let i = candidates[rng.gen_range(0..candidates.len())];
            nets[i].sinks.push(o.clone());
        }
    }
    Netlist::new(blocks, nets)
}

fn sample_fanout(rng: &mut ChaCha8Rng, q: f64) -> usize {
    // 1 + geometric(q) failures, mean 1/q
    let mut k = 1;
    while k < 64 && rng.gen::<f64>() >= q {
        k += 1;
    }
    k
}

fn local_sinks(
    rng: &mut ChaCha8Rng,
    logic: &[String],
    at: usize,
    k: usize,
    escape: f64,
) -> Vec<String> {
    let n = logic.len();
    let top = usize::BITS - (n - 1).leading_zeros();
    let k = k.min(n - 1);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut attempts = 0;
    while chosen.len() < k && attempts < 64 * k {
        attempts += 1;
        let mut level = 1u32;
        while level < top && rng.gen::<f64>() < escape {
            level += 1;
        }
        let pick = loop {
            // sibling half of the level-`level` partition holding `at`
            let half = 1usize << (level - 1);
            let start = ((at >> level) << level) + if (at >> (level - 1)) & 1 == 0 { half } else { 0 };
            let end = (start + half).min(n);
            if start < end {
                break start + rng.gen_range(0..end - start);
            }
            level += 1;
        };
        if !chosen.contains(&pick) {
            chosen.push(pick);
        }
    }
    chosen.into_iter().map(|i| logic[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file() {
        let n = parse_netlist("block a CLB\nblock b CLB\nnet n1 a b").unwrap();
        assert_eq!(n.blocks().len(), 2);
        assert_eq!(n.nets().len(), 1);
        assert_eq!(n.nets()[0].driver, "a");
        assert_eq!(n.nets()[0].sinks, vec!["b".to_string()]);
    }

    #[test]
    fn dangling_endpoint_names_line() {
        let err = parse_netlist("block a CLB\nblock b CLB\nnet n1 a c").unwrap_err();
        assert_eq!(err.to_string(), "unknown block 'c' at line 3");
    }

    #[test]
    fn duplicate_block_in_file() {
        let err = parse_netlist("block a CLB\n# comment\nblock a MEM\n").unwrap_err();
        assert_eq!(
            err,
            NetlistError::DuplicateBlock {
                id: "a".into(),
                line: 3
            }
        );
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = parse_netlist("block a CLB\nnet n1 a\n").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { line: 2, .. }));
        let err = parse_netlist("block a LUT\n").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { line: 1, .. }));
        let err = parse_netlist("wire a b\n").unwrap_err();
        assert!(matches!(err, NetlistError::Syntax { line: 1, .. }));
    }

    #[test]
    fn comments_and_blank_lines() {
        let n = parse_netlist("# header\n\nblock a CLB # trailing\nblock b OUTPAD\nnet n a b\n")
            .unwrap();
        assert_eq!(n.stats().n_outpad, 1);
    }

    fn b(id: &str, kind: BlockKind) -> Block {
        Block {
            id: id.into(),
            kind,
        }
    }

    fn net(id: &str, d: &str, s: &[&str]) -> Net {
        Net {
            id: id.into(),
            driver: d.into(),
            sinks: s.iter().map(|x| x.to_string()).collect(),
        }
    }

    #[test]
    fn validate_reports() {
        let blocks = vec![b("a", BlockKind::Clb), b("b", BlockKind::Clb)];
        assert!(validate(&blocks, &[net("n1", "a", &["b"])]).is_empty());

        let v = validate(&blocks, &[net("n1", "a", &["a"])]);
        assert_eq!(v, vec![Violation::SelfLoop("n1".into())]);
        assert_eq!(v[0].to_string(), "self-loop net n1");

        let dup = vec![b("a", BlockKind::Clb), b("a", BlockKind::Clb)];
        let v = validate(&dup, &[]);
        assert!(v[0].to_string().starts_with("duplicate id"));

        let v = validate(&[b("i", BlockKind::Inpad)], &[]);
        assert_eq!(v, vec![Violation::UndrivenInpad("i".into())]);
        assert_eq!(validate(&[], &[]), vec![Violation::Empty]);
    }

    #[test]
    fn tiny_generated_design() {
        let p = SyntheticParams {
            n_clb: 1,
            n_io_in: 1,
            n_io_out: 1,
            n_mem: 0,
            n_mult: 0,
            avg_fanout: 1.0,
            ..SyntheticParams::default()
        };
        let n = generate_synthetic(&p, 7).unwrap();
        assert_eq!(n.blocks().len(), 3);
        assert!(n.nets().len() >= 2);
        let again = generate_synthetic(&p, 7).unwrap();
        assert_eq!(n.serialize(), again.serialize());
    }

    #[test]
    fn diffeq_sized_stats() {
        let p = SyntheticParams {
            n_clb: 563,
            n_io_in: 0,
            n_io_out: 0,
            n_mem: 0,
            n_mult: 0,
            nets_per_clb: 2059.0 / 563.0,
            ..SyntheticParams::default()
        };
        let n = generate_synthetic(&p, 1).unwrap();
        let text = n.serialize();
        let s = parse_netlist(&text).unwrap().stats();
        assert_eq!(s.n_clb, 563);
        assert_eq!(s.n_nets, 2059);
    }

    #[test]
    fn net_ratio_near_reference_band() {
        let p = SyntheticParams {
            n_clb: 560,
            n_io_in: 64,
            n_io_out: 32,
            n_mem: 8,
            n_mult: 8,
            ..SyntheticParams::default()
        };
        let n = generate_synthetic(&p, 11).unwrap();
        let ratio = n.nets().len() as f64 / 560.0;
        let reference = 2059.0 / 563.0;
        assert!(
            (ratio - reference).abs() <= 0.3 * reference,
            "ratio {ratio}"
        );
    }

    #[test]
    fn rejects_infeasible_params() {
        let p = SyntheticParams {
            n_clb: 0,
            ..SyntheticParams::default()
        };
        assert!(matches!(
            generate_synthetic(&p, 0),
            Err(NetlistError::Params(_))
        ));
    }

    #[test]
    fn locality_tracks_rent_exponent() {
        // mean leaf distance between driver and sink grows with the exponent
        let spread = |r: f64| {
            let p = SyntheticParams {
                n_clb: 256,
                n_io_in: 0,
                n_io_out: 0,
                n_mem: 0,
                n_mult: 0,
                rent_exponent: r,
                ..SyntheticParams::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let logic: Vec<String> = (0..256).map(|i| format!("c{i}")).collect();
            let mut tot = 0.0;
            for at in 0..256 {
                for s in local_sinks(&mut rng, &logic, at, 3, 2f64.powf(p.rent_exponent - 1.0)) {
                    let j: usize = s[1..].parse().unwrap();
                    tot += (j as f64 - at as f64).abs();
                }
            }
            tot
        };
        assert!(spread(0.3) < spread(0.9));
    }

    fn arb_params() -> impl Strategy<Value = SyntheticParams> {
        (
            1usize..80,
            0usize..20,
            0usize..12,
            0usize..5,
            0usize..5,
            1.0f64..6.0,
            0.05f64..1.0,
            0.0f64..5.0,
        )
            .prop_map(|(c, i, o, m, x, f, r, npc)| SyntheticParams {
                n_clb: c,
                n_io_in: i,
                n_io_out: o,
                n_mem: m,
                n_mult: x,
                avg_fanout: f,
                rent_exponent: r,
                nets_per_clb: npc,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn generated_always_valid(p in arb_params(), seed in any::<u64>()) {
            let n = generate_synthetic(&p, seed).unwrap();
            prop_assert!(validate(n.blocks(), n.nets()).is_empty());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn serialize_parse_roundtrip(p in arb_params(), seed in any::<u64>()) {
            let n = generate_synthetic(&p, seed).unwrap();
            let back = parse_netlist(&n.serialize()).unwrap();
            prop_assert_eq!(back, n);
        }
    }
}
