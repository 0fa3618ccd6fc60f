//! Uniform grid index for radius queries over node coordinates.

use std::collections::HashMap;

use super::{euclidean, SpatialGraph};

type Cell = [i64; 3];

/// Hash grid bucketing every node of a graph into one cubic cell.
///
/// With `cell_size >= r` a query touches at most `3^dim` cells.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell_size: f64,
    dim: usize,
    grid: HashMap<Cell, Vec<usize>>,
}

impl SpatialIndex {
    pub fn build(g: &SpatialGraph, cell_size: f64) -> Self {
        assert!(
            cell_size > 0.0 && cell_size.is_finite(),
            "cell size must be positive and finite"
        );
        let mut index = Self {
            cell_size,
            dim: g.dim(),
            grid: HashMap::new(),
        };
        for node in 0..g.num_nodes() {
            let cell = index.cell_of(g.coord(node));
            index.grid.entry(cell).or_default().push(node);
        }
        index
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn num_cells(&self) -> usize {
        self.grid.len()
    }

    fn cell_of(&self, p: &[f64]) -> Cell {
        let mut cell = [0i64; 3];
        for (c, x) in cell.iter_mut().zip(p) {
            *c = (x / self.cell_size).floor() as i64;
        }
        cell
    }

    /// Nodes within Euclidean distance `r` of `center`, excluding `center`, sorted ascending.
    pub fn radius_query(&self, g: &SpatialGraph, center: usize, r: f64) -> Vec<usize> {
        let mut out = self.radius_query_point(g, g.coord(center), r);
        out.retain(|&v| v != center);
        out
    }

    /// Nodes within Euclidean distance `r` of an arbitrary point, sorted ascending.
    pub fn radius_query_point(&self, g: &SpatialGraph, p: &[f64], r: f64) -> Vec<usize> {
        if r <= 0.0 {
            return Vec::new();
        }
        let reach = (r / self.cell_size).ceil() as i64;
        let base = self.cell_of(p);
        let span = |axis: usize| {
            if axis < self.dim {
                -reach..=reach
            } else {
                0..=0
            }
        };
        let mut out = Vec::new();
        for dx in span(0) {
            for dy in span(1) {
                for dz in span(2) {
                    let cell = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if let Some(bucket) = self.grid.get(&cell) {
                        out.extend(
                            bucket
                                .iter()
                                .copied()
                                .filter(|&v| euclidean(g.coord(v), p) <= r),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
