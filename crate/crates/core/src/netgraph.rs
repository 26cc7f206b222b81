//! Cross-linked polymer networks as weighted graphs in a periodic box, and
//! shortest-path-length distributions between nodes a fixed offset apart.
//!
//! File format (one record per line, blank lines ignored):
//!
//! ```text
//! #box Lx Ly Lz px py pz
//! #nodes
//! id,x,y,z
//! 0,1.5,2.25,0.125
//! #edges
//! i,j,weight
//! 0,1,3
//! ```
//!
//! `px py pz` are `1` for periodic axes and `0` otherwise. The `id,x,y,z` and
//! `i,j,weight` column headers are optional.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Vector;
use crate::stats::{histogram, Histogram, Moments};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("unknown node id {0}")]
    UnknownNode(u64),
    #[error("network has no nodes")]
    EmptyGraph,
    #[error("q_x = {q_x} outside (0, L_x = {l_x}]")]
    InvalidOffset { q_x: f64, l_x: f64 },
    #[error("no source reaches its destination")]
    NoConnectedPairs,
    #[error("{0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, NetError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicBox {
    pub lengths: [f64; 3],
    pub periodic: [bool; 3],
}

impl PeriodicBox {
    /// Minimum-image separation `b - a` on periodic axes.
    pub fn separation(&self, a: &Vector<3>, b: &Vector<3>) -> Vector<3> {
        let mut d = [0.0; 3];
        for k in 0..3 {
            d[k] = b[k] - a[k];
            if self.periodic[k] {
                d[k] -= self.lengths[k] * (d[k] / self.lengths[k]).round();
            }
        }
        d
    }

    pub fn distance2(&self, a: &Vector<3>, b: &Vector<3>) -> f64 {
        self.separation(a, b).iter().map(|x| x * x).sum()
    }
}

#[derive(Clone, Debug)]
pub struct PolymerNetwork {
    pub bbox: PeriodicBox,
    ids: Vec<u64>,
    positions: Vec<Vector<3>>,
    index: HashMap<u64, usize>,
    /// `(i, j, weight)` by node id, in input order.
    edges: Vec<(u64, u64, u64)>,
    graph: UnGraph<(), u64>,
}

impl PartialEq for PolymerNetwork {
    /// The graph is derived from the other fields.
    fn eq(&self, other: &Self) -> bool {
        self.bbox == other.bbox
            && self.ids == other.ids
            && self.positions == other.positions
            && self.edges == other.edges
    }
}

impl PolymerNetwork {
    pub fn new(bbox: PeriodicBox, nodes: Vec<(u64, Vector<3>)>, edges: Vec<(u64, u64, u64)>) -> Result<Self> {
        for k in 0..3 {
            if !(bbox.lengths[k] > 0.0 && bbox.lengths[k].is_finite()) {
                return Err(NetError::Validation(format!("box length {k} must be > 0")));
            }
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, (id, p)) in nodes.iter().enumerate() {
            if index.insert(*id, i).is_some() {
                return Err(NetError::Validation(format!("duplicate node {id}")));
            }
            for k in 0..3 {
                if !p[k].is_finite() || (bbox.periodic[k] && !(p[k] >= 0.0 && p[k] < bbox.lengths[k])) {
                    return Err(NetError::Validation(format!(
                        "node {id} at ({}, {}, {}) lies outside the box",
                        p[0], p[1], p[2]
                    )));
                }
            }
        }
        let mut graph = UnGraph::with_capacity(nodes.len(), edges.len());
        for _ in 0..nodes.len() {
            graph.add_node(());
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for &(a, b, w) in &edges {
            let ia = *index.get(&a).ok_or(NetError::Validation(format!("edge ({a}, {b}) names unknown node {a}")))?;
            let ib = *index.get(&b).ok_or(NetError::Validation(format!("edge ({a}, {b}) names unknown node {b}")))?;
            if w == 0 {
                return Err(NetError::Validation(format!("edge ({a}, {b}) has weight 0")));
            }
            if a == b {
                return Err(NetError::Validation(format!("edge ({a}, {b}) is a self-loop")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(NetError::Validation(format!("duplicate edge ({a}, {b})")));
            }
            graph.add_edge(NodeIndex::new(ia), NodeIndex::new(ib), w);
        }
        let (ids, positions) = nodes.into_iter().unzip();
        Ok(Self {
            bbox,
            ids,
            positions,
            index,
            edges,
            graph,
        })
    }

    pub fn from_reader<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text).map_err(|e| NetError::Io(e.to_string()))?;
        parse(&text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))?;
        parse(&text)
    }

    /// Serializes with shortest round-trip float formatting, so
    /// `to_string -> parse -> to_string` is byte-identical.
    pub fn to_text(&self) -> String {
        let b = &self.bbox;
        let flag = |p: bool| u8::from(p);
        let mut out = format!(
            "#box {} {} {} {} {} {}\n#nodes\nid,x,y,z\n",
            b.lengths[0],
            b.lengths[1],
            b.lengths[2],
            flag(b.periodic[0]),
            flag(b.periodic[1]),
            flag(b.periodic[2])
        );
        for (id, p) in self.ids.iter().zip(&self.positions) {
            let _ = writeln!(out, "{id},{},{},{}", p[0], p[1], p[2]);
        }
        out.push_str("#edges\ni,j,weight\n");
        for (a, b, w) in &self.edges {
            let _ = writeln!(out, "{a},{b},{w}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| NetError::Io(format!("{}: {e}", path.display())))
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edges(&self) -> &[(u64, u64, u64)] {
        &self.edges
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn position(&self, id: u64) -> Result<Vector<3>> {
        Ok(self.positions[self.idx(id)?])
    }

    fn idx(&self, id: u64) -> Result<usize> {
        self.index.get(&id).copied().ok_or(NetError::UnknownNode(id))
    }

    /// Number of times edge `a -> b` crosses the x boundary, as a signed count.
    fn x_winding(&self, a: usize, b: usize) -> i64 {
        if !self.bbox.periodic[0] {
            return 0;
        }
        let lx = self.bbox.lengths[0];
        let dx = self.positions[b][0] - self.positions[a][0];
        -(dx / lx).round() as i64
    }

    /// Two copies of the graph stacked along x; an edge that winds an odd
    /// number of times across the x boundary switches copies.
    fn doubled(&self) -> UnGraph<(), u64> {
        let n = self.node_count();
        let mut g = UnGraph::with_capacity(2 * n, 2 * self.edges.len());
        for _ in 0..2 * n {
            g.add_node(());
        }
        for e in self.graph.edge_indices() {
            let (a, b) = self.graph.edge_endpoints(e).unwrap();
            let w = self.graph[e];
            let flip = self.x_winding(a.index(), b.index()).rem_euclid(2) as usize;
            for copy in 0..2 {
                let other = (copy + flip) % 2;
                g.add_edge(NodeIndex::new(a.index() + copy * n), NodeIndex::new(b.index() + other * n), w);
            }
        }
        g
    }
}

fn parse(text: &str) -> Result<PolymerNetwork> {
    #[derive(PartialEq)]
    enum Section {
        Start,
        Nodes,
        Edges,
    }
    let mut bbox = None;
    let mut section = Section::Start;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| NetError::Parse { line: line_no, msg };
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#box") {
            let f: Vec<&str> = rest.split_whitespace().collect();
            if f.len() != 6 {
                return Err(err(format!("#box needs 6 fields, got {}", f.len())));
            }
            let mut lengths = [0.0; 3];
            let mut periodic = [false; 3];
            for k in 0..3 {
                lengths[k] = f[k].parse().map_err(|_| err(format!("bad box length '{}'", f[k])))?;
                periodic[k] = match f[k + 3] {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(format!("periodic flag must be 0 or 1, got '{other}'"))),
                };
            }
            bbox = Some(PeriodicBox { lengths, periodic });
            continue;
        }
        match line {
            "#nodes" => {
                section = Section::Nodes;
                continue;
            }
            "#edges" => {
                section = Section::Edges;
                continue;
            }
            _ if line.starts_with('#') => return Err(err(format!("unknown directive '{line}'"))),
            _ => {}
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        match section {
            Section::Start => return Err(err("record before #nodes or #edges".into())),
            Section::Nodes => {
                if f == ["id", "x", "y", "z"] {
                    continue;
                }
                if f.len() != 4 {
                    return Err(err(format!("node record needs 4 fields, got {}", f.len())));
                }
                let id: u64 = f[0].parse().map_err(|_| err(format!("bad node id '{}'", f[0])))?;
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = f[k + 1].parse().map_err(|_| err(format!("bad coordinate '{}'", f[k + 1])))?;
                }
                nodes.push((id, p));
            }
            Section::Edges => {
                if f == ["i", "j", "weight"] {
                    continue;
                }
                if f.len() != 3 {
                    return Err(err(format!("edge record needs 3 fields, got {}", f.len())));
                }
                let mut v = [0u64; 3];
                for k in 0..3 {
                    v[k] = f[k].parse().map_err(|_| err(format!("bad integer '{}'", f[k])))?;
                }
                edges.push((v[0], v[1], v[2]));
            }
        }
    }
    let bbox = bbox.ok_or(NetError::Parse {
        line: 1,
        msg: "missing #box header".into(),
    })?;
    PolymerNetwork::new(bbox, nodes, edges)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Destination {
    pub id: u64,
    /// The destination is the periodic image of the source one box over.
    pub periodic_image: bool,
    /// Minimum-image distance from the offset point.
    pub distance: f64,
}

fn is_full_box(q_x: f64, l_x: f64) -> bool {
    (q_x - l_x).abs() <= 1e-12 * l_x
}

/// Node closest to `position(source) + (q_x, 0, 0)` under the minimum-image
/// convention; ties go to the smallest id. For `q_x = L_x` the destination is
/// the source's own periodic image.
pub fn find_destination(net: &PolymerNetwork, source: u64, q_x: f64) -> Result<Destination> {
    if net.node_count() == 0 {
        return Err(NetError::EmptyGraph);
    }
    let l_x = net.bbox.lengths[0];
    if !(q_x > 0.0 && q_x <= l_x * (1.0 + 1e-12)) {
        return Err(NetError::InvalidOffset { q_x, l_x });
    }
    let s = net.idx(source)?;
    if is_full_box(q_x, l_x) {
        return Ok(Destination {
            id: source,
            periodic_image: true,
            distance: 0.0,
        });
    }
    let mut target = net.positions[s];
    target[0] += q_x;
    let mut best: Option<(f64, u64)> = None;
    for (id, p) in net.ids.iter().zip(&net.positions) {
        let d = net.bbox.distance2(&target, p);
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && *id < bid),
        };
        if better {
            best = Some((d, *id));
        }
    }
    let (d2, id) = best.unwrap();
    Ok(Destination {
        id,
        periodic_image: false,
        distance: d2.sqrt(),
    })
}

/// Weighted shortest path length in bonds, `None` when disconnected. With
/// `replicate_x` the path runs from `i` in one copy of the box to `j` in the
/// neighboring copy along x.
pub fn shortest_path(net: &PolymerNetwork, i: u64, j: u64, replicate_x: bool) -> Result<Option<u64>> {
    let (a, b) = (net.idx(i)?, net.idx(j)?);
    if replicate_x {
        let g = net.doubled();
        let goal = NodeIndex::new(b + net.node_count());
        Ok(dijkstra(&g, NodeIndex::new(a), Some(goal), |e| *e.weight()).get(&goal).copied())
    } else {
        let goal = NodeIndex::new(b);
        Ok(dijkstra(&net.graph, NodeIndex::new(a), Some(goal), |e| *e.weight()).get(&goal).copied())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SourceFilter {
    All,
    Subset(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpQuery {
    pub q_x: f64,
    pub sources: SourceFilter,
    pub bin_width: f64,
}

impl SpQuery {
    pub fn all(q_x: f64) -> Self {
        Self {
            q_x,
            sources: SourceFilter::All,
            bin_width: crate::fpt::DEFAULT_BIN_WIDTH,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpDistribution {
    pub q_x: f64,
    /// Path lengths of connected pairs, in source order.
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
    pub n_sources: usize,
    pub n_disconnected: usize,
    pub n_periodic_image: usize,
}

/// Resolves the destination and shortest path for every selected source.
pub fn sp_distribution(net: &PolymerNetwork, query: &SpQuery) -> Result<SpDistribution> {
    let sources: Vec<u64> = match &query.sources {
        SourceFilter::All => net.ids.clone(),
        SourceFilter::Subset(s) => s.clone(),
    };
    if net.node_count() == 0 {
        return Err(NetError::EmptyGraph);
    }
    let doubled = is_full_box(query.q_x, net.bbox.lengths[0]).then(|| net.doubled());
    let n = net.node_count();
    let results: Vec<(Destination, Option<u64>)> = sources
        .par_iter()
        .map(|&s| {
            let dest = find_destination(net, s, query.q_x)?;
            let (a, b) = (net.idx(s)?, net.idx(dest.id)?);
            let sp = match (&doubled, dest.periodic_image) {
                (Some(g), true) => {
                    let goal = NodeIndex::new(b + n);
                    dijkstra(g, NodeIndex::new(a), Some(goal), |e| *e.weight()).get(&goal).copied()
                }
                _ => {
                    let goal = NodeIndex::new(b);
                    dijkstra(&net.graph, NodeIndex::new(a), Some(goal), |e| *e.weight()).get(&goal).copied()
                }
            };
            Ok((dest, sp))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<f64> = results.iter().filter_map(|r| r.1.map(|d| d as f64)).collect();
    if samples.is_empty() {
        return Err(NetError::NoConnectedPairs);
    }
    let m = Moments::of(&samples);
    let histogram = histogram(&samples, query.bin_width).map_err(|e| NetError::Validation(e.to_string()))?;
    Ok(SpDistribution {
        q_x: query.q_x,
        mean: m.mean,
        std: m.std,
        histogram,
        n_sources: results.len(),
        n_disconnected: results.len() - samples.len(),
        n_periodic_image: results.iter().filter(|r| r.0.periodic_image).count(),
        samples,
    })
}
