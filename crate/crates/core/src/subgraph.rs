//! h-hop enclosing subgraphs around a candidate link.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;

/// Local neighborhood of a target pair with the candidate edge materialized.
///
/// Local node 0 is the first target `n_i`, local node 1 the second target
/// `n_j`; the remaining nodes follow in (hop distance, global id) order.
/// `edges[0]` is always the candidate `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnclosingSubgraph {
    pub dim: usize,
    pub local_coords: Vec<f64>,
    pub local_to_global: Vec<usize>,
    /// Hop distance of every local node to the nearer target, computed
    /// without the candidate edge.
    pub hops: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub candidate_was_real: bool,
    pub h: usize,
}

impl EnclosingSubgraph {
    pub const TARGET: (usize, usize) = (0, 1);

    pub fn num_nodes(&self) -> usize {
        self.local_to_global.len()
    }

    pub fn coord(&self, local: usize) -> &[f64] {
        &self.local_coords[local * self.dim..(local + 1) * self.dim]
    }

    /// Same topology with replaced coordinates (used by the rotation and translation harnesses).
    pub fn with_coords(&self, local_coords: Vec<f64>) -> Self {
        assert_eq!(local_coords.len(), self.local_coords.len(), "coordinate table size");
        Self {
            local_coords,
            ..self.clone()
        }
    }

    /// Builds a subgraph directly from local parts. `edges` must not contain
    /// the candidate; it is prepended as `(0, 1)`. Hops are computed here.
    pub fn from_parts(
        dim: usize,
        local_coords: Vec<f64>,
        local_to_global: Vec<usize>,
        edges: &[(usize, usize)],
        h: usize,
    ) -> Result<Self> {
        let n = local_to_global.len();
        if n < 2 || local_coords.len() != n * dim {
            return Err(Error::Structural("subgraph needs two targets and one coordinate row per node".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut all = vec![(0, 1)];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::Structural(format!("invalid local edge ({a}, {b})")));
            }
            let e = (a.min(b), a.max(b));
            if e == (0, 1) {
                return Err(Error::Structural("candidate edge passed as a context edge".into()));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
            all.push(e);
        }
        let mut hops = vec![usize::MAX; n];
        let mut queue = VecDeque::from([0, 1]);
        hops[0] = 0;
        hops[1] = 0;
        while let Some(x) = queue.pop_front() {
            for &y in &adjacency[x] {
                if hops[y] == usize::MAX {
                    hops[y] = hops[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        Ok(Self {
            dim,
            local_coords,
            local_to_global,
            hops,
            edges: all,
            candidate_was_real: false,
            h,
        })
    }
}

/// Extracts the union of the `h`-hop balls around `u` and `v`.
///
/// The pair `(u, v)` itself is removed from the traversal adjacency and the
/// induced edge set, then re-added as the candidate, so real and sampled
/// candidates take the same path.
pub fn extract_enclosing_subgraph(g: &SpatialGraph, u: usize, v: usize, h: usize) -> Result<EnclosingSubgraph> {
    g.check_node(u)?;
    g.check_node(v)?;
    if u == v {
        return Err(Error::Structural(format!("target pair ({u}, {v}) is a self pair")));
    }
    if h == 0 {
        return Err(Error::Config("hop count h must be at least 1".into()));
    }
    let is_candidate = |a: usize, b: usize| (a == u && b == v) || (a == v && b == u);

    let mut hop_of: HashMap<usize, usize> = HashMap::from([(u, 0), (v, 0)]);
    let mut order = vec![u, v];
    let mut queue = VecDeque::from([u, v]);
    while let Some(x) = queue.pop_front() {
        let d = hop_of[&x];
        if d == h {
            continue;
        }
        for &y in g.neighbors(x) {
            if is_candidate(x, y) || hop_of.contains_key(&y) {
                continue;
            }
            hop_of.insert(y, d + 1);
            order.push(y);
            queue.push_back(y);
        }
    }
    order[2..].sort_unstable_by_key(|&x| (hop_of[&x], x));
    let local_of: HashMap<usize, usize> = order.iter().enumerate().map(|(l, &x)| (x, l)).collect();

    let mut edges = vec![EnclosingSubgraph::TARGET];
    for (la, &a) in order.iter().enumerate() {
        for &b in g.neighbors(a) {
            if b <= a || is_candidate(a, b) {
                continue;
            }
            if let Some(&lb) = local_of.get(&b) {
                edges.push((la.min(lb), la.max(lb)));
            }
        }
    }
    edges[1..].sort_unstable();

    let dim = g.dim();
    let mut local_coords = Vec::with_capacity(order.len() * dim);
    for &x in &order {
        local_coords.extend_from_slice(g.coord(x));
    }
    let hops = order.iter().map(|x| hop_of[x]).collect();
    Ok(EnclosingSubgraph {
        dim,
        local_coords,
        local_to_global: order,
        hops,
        edges,
        candidate_was_real: g.has_edge_unchecked(u, v),
        h,
    })
}
