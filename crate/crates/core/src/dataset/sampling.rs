//! Spatially plausible negative links.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{SpatialGraph, SpatialIndex};
use crate::rng;

/// Samples `count` distinct canonical non-edges whose endpoints lie within `delta`.
///
/// Each attempt draws a uniform node `u`, queries all nodes within `delta`,
/// drops `u`'s neighbors and draws `v` uniformly from what remains. At most
/// `100 * count` attempts are made.
pub fn sample_negative_links(
    g: &SpatialGraph,
    count: usize,
    seed: u64,
    delta: f64,
) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Err(Error::Validation("negative sample count must be at least 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Validation(format!("sampling threshold {delta} must be positive")));
    }
    if g.num_nodes() < 2 {
        return Err(Error::Validation("negative sampling needs at least two nodes".into()));
    }
    let index = SpatialIndex::build(g, delta);
    let mut rng = rng::stream(seed, "prepare.negatives");
    let budget = 100 * count;
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts == budget {
            return Err(Error::Sampling {
                requested: count,
                achieved: out.len(),
                attempts,
            });
        }
        attempts += 1;
        let u = rng.random_range(0..g.num_nodes());
        let mut candidates = index.radius_query(g, u, delta);
        let adjacent = g.neighbors(u);
        candidates.retain(|v| adjacent.binary_search(v).is_err());
        if candidates.is_empty() {
            continue;
        }
        let v = candidates[rng.random_range(0..candidates.len())];
        let pair = if u < v { (u, v) } else { (v, u) };
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    Ok(out)
}
