//! Desk-scale synthetic flow networks.
//!
//! `VesselTree` grows a 3D branching tree (each node takes at most two
//! children) and then closes short loops between branches that are far apart
//! in hops. `RoadGrid` jitters a 2D lattice and deletes random non-spanning-tree
//! edges, so the result stays connected.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{SpatialGraph, SpatialIndex};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    VesselTree,
    RoadGrid,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::VesselTree => "vessel-like-tree",
            NetworkKind::RoadGrid => "road-like-grid",
        })
    }
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vessel-like-tree" | "vessel" => Ok(NetworkKind::VesselTree),
            "road-like-grid" | "road" => Ok(NetworkKind::RoadGrid),
            other => Err(Error::Validation(format!("unknown network kind {other:?}"))),
        }
    }
}

const LOOP_FRACTION: f64 = 0.10;
const MIN_SEPARATION: f64 = 0.6;
const SEGMENT_LENGTH: (f64, f64) = (0.7, 1.3);
const LOOP_RADIUS: f64 = 1.5;
const LOOP_MIN_HOPS: usize = 4;
const ROAD_DELETE_PROB: f64 = 0.6;
const ROAD_JITTER: f64 = 0.25;

pub fn generate_synthetic_network(kind: NetworkKind, num_nodes: usize, seed: u64) -> Result<SpatialGraph> {
    if num_nodes < 10 {
        return Err(Error::Validation(format!(
            "synthetic networks need at least 10 nodes, got {num_nodes}"
        )));
    }
    let mut rng = rng::stream(seed, "synth");
    match kind {
        NetworkKind::VesselTree => vessel_tree(num_nodes, &mut rng),
        NetworkKind::RoadGrid => road_grid(num_nodes, &mut rng),
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let p: [f64; 3] = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return [p[0] / n, p[1] / n, p[2] / n];
        }
    }
}

fn normalized(p: [f64; 3]) -> Option<[f64; 3]> {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    (n > 1e-9).then(|| [p[0] / n, p[1] / n, p[2] / n])
}

struct GrowthGrid {
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl GrowthGrid {
    fn key(p: &[f64; 3]) -> [i64; 3] {
        [p[0].floor() as i64, p[1].floor() as i64, p[2].floor() as i64]
    }

    fn insert(&mut self, id: usize, p: &[f64; 3]) {
        self.cells.entry(Self::key(p)).or_default().push(id);
    }

    /// True if some node other than `skip` lies within `MIN_SEPARATION` of `p`.
    fn crowded(&self, points: &[[f64; 3]], p: &[f64; 3], skip: usize) -> bool {
        let k = Self::key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &id in bucket {
                            if id == skip {
                                continue;
                            }
                            let q = &points[id];
                            let d2 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
                            if d2 < MIN_SEPARATION * MIN_SEPARATION {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

fn vessel_tree(num_nodes: usize, rng: &mut ChaCha8Rng) -> Result<SpatialGraph> {
    let mut points: Vec<[f64; 3]> = vec![[0.0; 3]];
    let mut dirs = vec![random_unit(rng)];
    let mut degree = vec![0usize];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(num_nodes + num_nodes / 10);
    let mut grid = GrowthGrid {
        cells: HashMap::new(),
    };
    grid.insert(0, &points[0]);
    let mut active = vec![0usize];
    // Nodes that failed to place a child under the separation rule.
    let mut stuck: Vec<usize> = Vec::new();

    while points.len() < num_nodes {
        if active.is_empty() {
            // Fall back to any node with spare degree; only reachable in very dense growth.
            active = std::mem::take(&mut stuck);
            if active.is_empty() {
                return Err(Error::Validation("vessel growth ran out of attachment points".into()));
            }
        }
        let slot = rng.random_range(0..active.len());
        let parent = active[slot];
        let mut placed = None;
        for _ in 0..24 {
            let jitter = random_unit(rng);
            let base = dirs[parent];
            let Some(dir) = normalized([
                base[0] + 0.9 * jitter[0],
                base[1] + 0.9 * jitter[1],
                base[2] + 0.9 * jitter[2],
            ]) else {
                continue;
            };
            let len = rng.random_range(SEGMENT_LENGTH.0..SEGMENT_LENGTH.1);
            let p = points[parent];
            let q = [p[0] + len * dir[0], p[1] + len * dir[1], p[2] + len * dir[2]];
            if !grid.crowded(&points, &q, parent) {
                placed = Some((q, dir));
                break;
            }
        }
        match placed {
            Some((q, dir)) => {
                let child = points.len();
                points.push(q);
                dirs.push(dir);
                degree.push(1);
                degree[parent] += 1;
                grid.insert(child, &q);
                edges.push((parent, child));
                let cap = if parent == 0 { 2 } else { 3 };
                if degree[parent] >= cap {
                    active.swap_remove(slot);
                }
                active.push(child);
            }
            None => {
                active.swap_remove(slot);
                stuck.push(parent);
            }
        }
    }

    let coords: Vec<f64> = points.iter().flatten().copied().collect();
    let tree = SpatialGraph::new(3, coords.clone(), &edges)?;
    let index = SpatialIndex::build(&tree, LOOP_RADIUS);
    let wanted = (LOOP_FRACTION * num_nodes as f64).round() as usize;
    let mut adjacency: Vec<Vec<usize>> = (0..num_nodes).map(|u| tree.neighbors(u).to_vec()).collect();
    let mut added = 0;
    let mut attempts = 0;
    while added < wanted && attempts < 50 * wanted.max(1) {
        attempts += 1;
        let a = rng.random_range(0..num_nodes);
        if adjacency[a].len() >= 3 {
            continue;
        }
        let mut near = index.radius_query(&tree, a, LOOP_RADIUS);
        near.retain(|&b| adjacency[b].len() < 3 && !adjacency[a].contains(&b));
        near.sort_by(|&x, &y| tree.distance(a, x).total_cmp(&tree.distance(a, y)).then(x.cmp(&y)));
        let Some(&b) = near
            .iter()
            .find(|&&b| hop_distance_exceeds(&adjacency, a, b, LOOP_MIN_HOPS - 1))
        else {
            continue;
        };
        adjacency[a].push(b);
        adjacency[b].push(a);
        edges.push((a, b));
        added += 1;
    }
    SpatialGraph::new(3, coords, &edges)
}

/// True if `b` is not reachable from `a` within `limit` hops.
fn hop_distance_exceeds(adjacency: &[Vec<usize>], a: usize, b: usize, limit: usize) -> bool {
    let mut seen = HashSet::from([a]);
    let mut queue = VecDeque::from([(a, 0usize)]);
    while let Some((x, d)) = queue.pop_front() {
        if x == b {
            return false;
        }
        if d == limit {
            continue;
        }
        for &y in &adjacency[x] {
            if seen.insert(y) {
                queue.push_back((y, d + 1));
            }
        }
    }
    true
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn road_grid(num_nodes: usize, rng: &mut ChaCha8Rng) -> Result<SpatialGraph> {
    let rows = (num_nodes as f64).sqrt().floor() as usize;
    let cols = num_nodes.div_ceil(rows);
    let mut coords = Vec::with_capacity(2 * num_nodes);
    for k in 0..num_nodes {
        let (r, c) = (k / cols, k % cols);
        coords.push(c as f64 + rng.random_range(-ROAD_JITTER..ROAD_JITTER));
        coords.push(r as f64 + rng.random_range(-ROAD_JITTER..ROAD_JITTER));
    }
    let mut lattice = Vec::new();
    for k in 0..num_nodes {
        let (r, c) = (k / cols, k % cols);
        if c + 1 < cols && k + 1 < num_nodes {
            lattice.push((k, k + 1));
        }
        if (r + 1) * cols + c < num_nodes {
            lattice.push((k, k + cols));
        }
    }
    lattice.shuffle(rng);
    let mut parent: Vec<usize> = (0..num_nodes).collect();
    let mut edges = Vec::with_capacity(lattice.len());
    for (a, b) in lattice {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            edges.push((a, b));
        } else if !rng.random_bool(ROAD_DELETE_PROB) {
            edges.push((a, b));
        }
    }
    SpatialGraph::new(2, coords, &edges)
}
