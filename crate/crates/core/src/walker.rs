//! Second-order biased random walks producing path-based neighborhoods.
//!
//! A walk that arrived at `s` from `t` moves to a neighbor `r` of `s` with
//! unnormalized weight
//!
//! | relation of `r` to `t`        | weight  |
//! |-------------------------------|---------|
//! | `r == t` (distance 0)         | `1 / p` |
//! | `r` adjacent to `t` (distance 1) | `1`  |
//! | otherwise (distance 2)        | `1 / q` |
//!
//! Small `p` with large `q` keeps walks close to the start (BFS-like); large
//! `p` with small `q` pushes them outward (DFS-like). The first step has no
//! predecessor and is uniform.
//!
//! Walks start at the target and are returned reversed, so every [`Path`]
//! ends at its target. Isolated nodes produce a path that repeats the target.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("invalid walk strategy: {0}")]
    InvalidStrategy(String),
    #[error("node {0} has no neighbors")]
    NoNeighbors(usize),
    #[error("previous node {prev} is not adjacent to {cur}")]
    NotAdjacent { prev: usize, cur: usize },
    #[error("node index {index} out of range for graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
}

/// Parameters of one walk strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkStrategy {
    pub name: String,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    /// Nodes per path, `K`.
    pub length: usize,
    /// Paths sampled per node, `R`.
    pub walks_per_node: usize,
}

impl WalkStrategy {
    pub fn new(name: impl Into<String>, p: f64, q: f64, length: usize, walks_per_node: usize) -> Result<Self, WalkError> {
        let ws = WalkStrategy {
            name: name.into(),
            p,
            q,
            length,
            walks_per_node,
        };
        ws.validate()?;
        Ok(ws)
    }

    /// BFS-like preset, `p = 0.1`, `q = 10`.
    pub fn bfs(length: usize, walks_per_node: usize) -> Result<Self, WalkError> {
        Self::new("bfs", 0.1, 10.0, length, walks_per_node)
    }

    /// DFS-like preset, `p = 10`, `q = 0.1`.
    pub fn dfs(length: usize, walks_per_node: usize) -> Result<Self, WalkError> {
        Self::new("dfs", 10.0, 0.1, length, walks_per_node)
    }

    pub fn validate(&self) -> Result<(), WalkError> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.p) || !positive(self.q) {
            return Err(WalkError::InvalidStrategy(format!(
                "{}: p and q must be positive, got p={} q={}",
                self.name, self.p, self.q
            )));
        }
        if self.length < 2 {
            return Err(WalkError::InvalidStrategy(format!("{}: path length must be >= 2", self.name)));
        }
        if self.walks_per_node < 1 {
            return Err(WalkError::InvalidStrategy(format!("{}: walks per node must be >= 1", self.name)));
        }
        if self.name.is_empty() || self.name.contains(char::is_whitespace) {
            return Err(WalkError::InvalidStrategy(format!("bad strategy name `{}`", self.name)));
        }
        Ok(())
    }
}

/// Identifies an independent random stream: a ChaCha8 generator seeded with
/// `seed` and positioned on stream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// An ordered walk whose last node is `target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub nodes: Vec<u32>,
    pub target: usize,
    pub strategy: String,
}

/// Unnormalized transition weights from `cur` to each of its neighbors (in
/// neighbor-list order), given the node the walk came from.
pub fn transition_weights(
    g: &Graph,
    prev: Option<usize>,
    cur: usize,
    p: f64,
    q: f64,
) -> Result<Vec<f64>, WalkError> {
    let n = g.n();
    for idx in std::iter::once(cur).chain(prev) {
        if idx >= n {
            return Err(WalkError::NodeOutOfRange { index: idx, n });
        }
    }
    let nbrs = g.neighbors_unchecked(cur);
    if nbrs.is_empty() {
        return Err(WalkError::NoNeighbors(cur));
    }
    match prev {
        None => Ok(vec![1.0; nbrs.len()]),
        Some(t) => {
            if !g.has_edge(cur, t) {
                return Err(WalkError::NotAdjacent { prev: t, cur });
            }
            let (inv_p, inv_q) = (1.0 / p, 1.0 / q);
            Ok(nbrs.iter().map(|&r| biased_weight(g, t, r as usize, inv_p, inv_q)).collect())
        }
    }
}

#[inline]
fn biased_weight(g: &Graph, t: usize, r: usize, inv_p: f64, inv_q: f64) -> f64 {
    if r == t {
        inv_p
    } else if g.has_edge(t, r) {
        1.0
    } else {
        inv_q
    }
}

/// One step of the walk by inverse-CDF sampling over the neighbor weights.
/// `cur` must have at least one neighbor.
fn step<R: Rng + ?Sized>(g: &Graph, prev: Option<usize>, cur: usize, inv_p: f64, inv_q: f64, rng: &mut R) -> usize {
    let nbrs = g.neighbors_unchecked(cur);
    let Some(t) = prev else {
        return nbrs[rng.gen_range(0..nbrs.len())] as usize;
    };
    let total: f64 = nbrs.iter().map(|&r| biased_weight(g, t, r as usize, inv_p, inv_q)).sum();
    let mut u = rng.gen::<f64>() * total;
    for &r in nbrs {
        let w = biased_weight(g, t, r as usize, inv_p, inv_q);
        if u < w {
            return r as usize;
        }
        u -= w;
    }
    // rounding left u marginally above the last cumulative weight
    *nbrs.last().unwrap() as usize
}

/// Writes a walk of `ws.length` nodes starting at `target` into `out`, in
/// generation order (target first).
fn walk_into<R: Rng + ?Sized>(g: &Graph, target: usize, ws: &WalkStrategy, rng: &mut R, out: &mut [u32]) {
    let (inv_p, inv_q) = (1.0 / ws.p, 1.0 / ws.q);
    out[0] = target as u32;
    let mut prev = None;
    let mut cur = target;
    for slot in out.iter_mut().skip(1) {
        if g.degree(cur) > 0 {
            let next = step(g, prev, cur, inv_p, inv_q, rng);
            prev = Some(cur);
            cur = next;
        }
        *slot = cur as u32;
    }
}

/// Samples one path ending at `target`.
pub fn sample_walk<R: Rng + ?Sized>(g: &Graph, target: usize, ws: &WalkStrategy, rng: &mut R) -> Result<Path, WalkError> {
    if target >= g.n() {
        return Err(WalkError::NodeOutOfRange { index: target, n: g.n() });
    }
    let mut nodes = vec![0u32; ws.length];
    walk_into(g, target, ws, rng, &mut nodes);
    nodes.reverse();
    Ok(Path {
        nodes,
        target,
        strategy: ws.name.clone(),
    })
}

/// Samples the `walks_per_node` paths that make up the neighborhood of
/// `target` under `ws`.
pub fn sample_neighborhood(g: &Graph, target: usize, ws: &WalkStrategy, stream: RngStream) -> Result<Vec<Path>, WalkError> {
    let mut rng = stream.rng();
    (0..ws.walks_per_node)
        .map(|_| sample_walk(g, target, ws, &mut rng))
        .collect()
}

/// Paths for every node under one strategy, stored as a dense
/// `n × R × K` index array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkTable {
    pub strategy: String,
    pub length: usize,
    pub walks_per_node: usize,
    nodes: Vec<u32>,
}

impl WalkTable {
    /// Samples neighborhoods for all nodes. Target `i` draws from stream
    /// `(stream_base << 32) | i` of `seed`, so the result does not depend on
    /// how work is scheduled across threads.
    pub fn sample(g: &Graph, ws: &WalkStrategy, seed: u64, stream_base: u64) -> Result<Self, WalkError> {
        ws.validate()?;
        let (k, r) = (ws.length, ws.walks_per_node);
        let mut nodes = vec![0u32; g.n() * r * k];
        nodes.par_chunks_mut(r * k).enumerate().for_each(|(target, block)| {
            let mut rng = RngStream::new(seed, (stream_base << 32) | target as u64).rng();
            for path in block.chunks_mut(k) {
                walk_into(g, target, ws, &mut rng, path);
                path.reverse();
            }
        });
        Ok(WalkTable {
            strategy: ws.name.clone(),
            length: k,
            walks_per_node: r,
            nodes,
        })
    }

    /// Builds a table from explicit paths, `paths[i]` being the neighborhood of node `i`.
    pub fn from_paths(strategy: impl Into<String>, paths: &[Vec<Vec<u32>>]) -> Result<Self, WalkError> {
        let r = paths.first().map_or(0, |p| p.len());
        let k = paths.first().and_then(|p| p.first()).map_or(0, |p| p.len());
        if r == 0 || k == 0 {
            return Err(WalkError::InvalidStrategy("empty neighborhood".into()));
        }
        let mut nodes = Vec::with_capacity(paths.len() * r * k);
        for (i, hood) in paths.iter().enumerate() {
            if hood.len() != r || hood.iter().any(|p| p.len() != k) {
                return Err(WalkError::InvalidStrategy(format!("node {i}: ragged neighborhood")));
            }
            for p in hood {
                nodes.extend_from_slice(p);
            }
        }
        Ok(WalkTable {
            strategy: strategy.into(),
            length: k,
            walks_per_node: r,
            nodes,
        })
    }

    pub fn num_targets(&self) -> usize {
        self.nodes.len() / (self.length * self.walks_per_node)
    }

    /// Path `j` of target `i`.
    pub fn path(&self, i: usize, j: usize) -> &[u32] {
        let k = self.length;
        let start = (i * self.walks_per_node + j) * k;
        &self.nodes[start..start + k]
    }

    /// All `n·R` paths, row-major, each of length `K`.
    pub fn flat(&self) -> &[u32] {
        &self.nodes
    }

    /// Dumps the table as `strategy<TAB>target<TAB>v1,...,vK` lines.
    pub fn write_corpus<W: Write>(&self, mut w: W) -> io::Result<()> {
        for i in 0..self.num_targets() {
            for j in 0..self.walks_per_node {
                let path = self.path(i, j);
                let joined: Vec<String> = path.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}\t{}\t{}", self.strategy, i, joined.join(","))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(n, edges, vec![0.0; n], 1).unwrap()
    }

    #[test]
    fn dfs_weights_on_triangle() {
        // t=0, s=1, r=2
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let w = transition_weights(&g, Some(0), 1, 10.0, 0.1).unwrap();
        assert_eq!(w, vec![0.1, 1.0]);
    }

    #[test]
    fn bfs_weights_on_path() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let w = transition_weights(&g, Some(0), 1, 0.1, 10.0).unwrap();
        assert_eq!(w, vec![10.0, 0.1]);
    }

    #[test]
    fn unbiased_and_first_step_weights() {
        let g = graph(5, &[(0, 1), (1, 2), (1, 3), (2, 3), (3, 4)]);
        assert_eq!(transition_weights(&g, Some(0), 1, 1.0, 1.0).unwrap(), vec![1.0; 3]);
        assert_eq!(transition_weights(&g, None, 3, 10.0, 0.1).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn weight_errors() {
        let g = graph(4, &[(0, 1), (1, 2)]);
        assert_eq!(transition_weights(&g, None, 3, 1.0, 1.0), Err(WalkError::NoNeighbors(3)));
        assert_eq!(
            transition_weights(&g, Some(2), 0, 1.0, 1.0),
            Err(WalkError::NotAdjacent { prev: 2, cur: 0 })
        );
    }

    #[test]
    fn isolated_node_repeats() {
        let g = graph(3, &[(0, 1)]);
        let ws = WalkStrategy::bfs(4, 1).unwrap();
        let hood = sample_neighborhood(&g, 2, &ws, RngStream::new(1, 0)).unwrap();
        assert_eq!(hood.len(), 1);
        assert_eq!(hood[0].nodes, vec![2, 2, 2, 2]);
    }

    #[test]
    fn two_step_walk_on_path_graph_is_symmetric() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let ws = WalkStrategy::new("u", 1.0, 1.0, 2, 1).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        let mut zero = 0usize;
        let trials = 20_000;
        for _ in 0..trials {
            let p = sample_walk(&g, 1, &ws, &mut rng).unwrap();
            assert_eq!(p.nodes[1], 1);
            assert!(p.nodes[0] == 0 || p.nodes[0] == 2);
            zero += (p.nodes[0] == 0) as usize;
        }
        let frac = zero as f64 / trials as f64;
        // 5 standard deviations of a fair coin over 20k trials
        assert!((frac - 0.5).abs() < 5.0 * (0.25f64 / trials as f64).sqrt());
    }

    #[test]
    fn neighborhood_size_and_determinism() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]);
        let ws = WalkStrategy::dfs(5, 6).unwrap();
        let a = sample_neighborhood(&g, 2, &ws, RngStream::new(9, 4)).unwrap();
        let b = sample_neighborhood(&g, 2, &ws, RngStream::new(9, 4)).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, b);
        for p in &a {
            assert_eq!(p.nodes.len(), 5);
            assert_eq!(*p.nodes.last().unwrap(), 2);
            assert!(p.nodes.windows(2).all(|w| g.has_edge(w[0] as usize, w[1] as usize)));
        }
    }

    #[test]
    fn table_matches_per_target_sampling() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]);
        let ws = WalkStrategy::bfs(4, 3).unwrap();
        let table = WalkTable::sample(&g, &ws, 17, 5).unwrap();
        assert_eq!(table.num_targets(), 5);
        for i in 0..5 {
            let hood = sample_neighborhood(&g, i, &ws, RngStream::new(17, (5 << 32) | i as u64)).unwrap();
            for (j, p) in hood.iter().enumerate() {
                assert_eq!(table.path(i, j), p.nodes.as_slice());
            }
        }
        assert_eq!(table, WalkTable::sample(&g, &ws, 17, 5).unwrap());
        assert_ne!(table, WalkTable::sample(&g, &ws, 17, 6).unwrap());
    }

    #[test]
    fn corpus_format() {
        let t = WalkTable::from_paths("bfs", &[vec![vec![1, 0]], vec![vec![0, 1]]]).unwrap();
        let mut out = Vec::new();
        t.write_corpus(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "bfs\t0\t1,0\nbfs\t1\t0,1\n");
    }

    #[test]
    fn invalid_strategies() {
        assert!(WalkStrategy::new("x", 0.0, 1.0, 3, 1).is_err());
        assert!(WalkStrategy::new("x", 1.0, -1.0, 3, 1).is_err());
        assert!(WalkStrategy::new("x", 1.0, 1.0, 1, 1).is_err());
        assert!(WalkStrategy::new("x", 1.0, 1.0, 3, 0).is_err());
    }
}
