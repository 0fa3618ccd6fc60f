//! Immutable undirected spatial graph with CSR adjacency.
//!
//! Edges are stored once in canonical orientation `u < v`. Geometric
//! orientation only exists downstream, in the line graph.

mod spatial;

pub use spatial::SpatialIndex;

use crate::error::{Error, Result};

/// Undirected graph whose nodes carry `dim`-dimensional coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    dim: usize,
    coords: Vec<f64>,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl SpatialGraph {
    /// Builds a graph from a flat row-major coordinate table and an edge list.
    ///
    /// Edges are canonicalized to `u < v` and deduplicated. Self-loops,
    /// out-of-range ids and non-finite coordinates are rejected.
    pub fn new(dim: usize, coords: Vec<f64>, edges: &[(usize, usize)]) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Validation(format!(
                "spatial dimension must be 2 or 3, got {dim}"
            )));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Structural(format!(
                "coordinate table of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        let num_nodes = coords.len() / dim;
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Validation(format!(
                "node {} has a non-finite coordinate",
                pos / dim
            )));
        }

        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Structural(format!(
                    "edge ({a}, {b}) references a node outside 0..{num_nodes}"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("self-loop ({a}, {b})")));
            }
            canon.push(if a < b { (a, b) } else { (b, a) });
        }
        canon.sort_unstable();
        canon.dedup();

        let mut degree = vec![0usize; num_nodes];
        for &(a, b) in &canon {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..num_nodes].to_vec();
        let mut neighbors = vec![0usize; offsets[num_nodes]];
        for &(a, b) in &canon {
            neighbors[cursor[a]] = b;
            cursor[a] += 1;
            neighbors[cursor[b]] = a;
            cursor[b] += 1;
        }
        for u in 0..num_nodes {
            neighbors[offsets[u]..offsets[u + 1]].sort_unstable();
        }

        Ok(Self {
            dim,
            coords,
            edges: canon,
            offsets,
            neighbors,
        })
    }

    /// Convenience constructor from per-node coordinate rows.
    pub fn from_rows(rows: &[Vec<f64>], edges: &[(usize, usize)]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(2);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Validation(format!(
                "node {i} has {} coordinates, expected {dim}",
                r.len()
            )));
        }
        Self::new(dim, rows.concat(), edges)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edge list, sorted ascending.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coord(&self, node: usize) -> &[f64] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    /// Sorted neighbor row of `node`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn check_node(&self, node: usize) -> Result<()> {
        if node < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::Structural(format!(
                "node id {node} out of range 0..{}",
                self.num_nodes()
            )))
        }
    }

    /// Membership test by binary search on the CSR row of `u`.
    pub fn edge_exists(&self, u: usize, v: usize) -> Result<bool> {
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(Error::Validation(format!("self pair ({u}, {v})")));
        }
        Ok(self.has_edge_unchecked(u, v))
    }

    pub(crate) fn has_edge_unchecked(&self, u: usize, v: usize) -> bool {
        let (a, b) = if self.degree(u) <= self.degree(v) {
            (u, v)
        } else {
            (v, u)
        };
        self.neighbors(a).binary_search(&b).is_ok()
    }

    pub fn distance(&self, u: usize, v: usize) -> f64 {
        euclidean(self.coord(u), self.coord(v))
    }

    /// Mean and population standard deviation of Euclidean edge lengths.
    pub fn edge_length_stats(&self) -> Result<(f64, f64)> {
        if self.edges.is_empty() {
            return Err(Error::Domain("edge length statistics of an empty edge set".into()));
        }
        let n = self.edges.len() as f64;
        let lengths: Vec<f64> = self.edges.iter().map(|&(u, v)| self.distance(u, v)).collect();
        let mean = lengths.iter().sum::<f64>() / n;
        let var = lengths.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
        Ok((mean, var.sqrt()))
    }

    /// Spatial sampling threshold: mean edge length plus two standard deviations.
    pub fn sampling_threshold(&self) -> Result<f64> {
        let (mean, std) = self.edge_length_stats()?;
        Ok(mean + 2.0 * std)
    }

    /// Copy of the graph with every coordinate shifted by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::Shape(format!(
                "shift of length {} for a {}-dimensional graph",
                shift.len(),
                self.dim
            )));
        }
        let mut out = self.clone();
        for (i, c) in out.coords.iter_mut().enumerate() {
            *c += shift[i % self.dim];
        }
        Ok(out)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
