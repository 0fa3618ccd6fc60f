//! Line graphs of enclosing subgraphs with oriented vector embeddings.
//!
//! Every subgraph edge becomes a vnode carrying `coords[head] - coords[tail]`.
//! The candidate points from `n_i` to `n_j`; every other edge points away
//! from the target pair (tail = endpoint with the smaller hop distance, ties
//! broken by the smaller global id).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::subgraph::EnclosingSubgraph;

pub const NUM_LABELS: usize = 4;
pub const LABEL_TARGET: u8 = 0;
pub const LABEL_NEAR_I: u8 = 1;
pub const LABEL_NEAR_J: u8 = 2;
pub const LABEL_OTHER: u8 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorNode {
    /// Local subgraph node ids.
    pub tail: usize,
    pub head: usize,
    pub embedding: Vec<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorLineGraph {
    pub dim: usize,
    pub vnodes: Vec<VectorNode>,
    /// Sorted neighbor lists; `a` and `b` are adjacent iff their edges share an endpoint.
    pub vadj: Vec<Vec<usize>>,
    pub target_vnode: usize,
    /// Vnodes whose edge touches `n_i` (local node 0), target included.
    pub incident_i: Vec<usize>,
    /// Vnodes whose edge touches `n_j` (local node 1), target included.
    pub incident_j: Vec<usize>,
    pub local_to_global: Vec<usize>,
}

impl VectorLineGraph {
    pub fn len(&self) -> usize {
        self.vnodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vnodes.is_empty()
    }

    pub fn num_vedges(&self) -> usize {
        self.vadj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Embeddings as a row-major `len × dim` table.
    pub fn embedding_table(&self) -> Vec<f64> {
        self.vnodes.iter().flat_map(|n| n.embedding.iter().copied()).collect()
    }

    /// Global (tail, head) of a vnode.
    pub fn global_orientation(&self, vnode: usize) -> (usize, usize) {
        let n = &self.vnodes[vnode];
        (self.local_to_global[n.tail], self.local_to_global[n.head])
    }

    /// Vnode adjacency pairs `(a, b)` with `a < b`, for debug dumps.
    pub fn vedge_pairs(&self) -> Vec<(usize, usize)> {
        self.vadj
            .iter()
            .enumerate()
            .flat_map(|(a, row)| row.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    /// JSON debug dump: vnodes and vadj pairs.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "vnodes": self.vnodes,
            "vadj": self.vedge_pairs(),
            "target_vnode": self.target_vnode,
        })
    }
}

/// One-hot encoding of a labeling-trick label.
pub fn encode_label(label: u8) -> Result<[f64; NUM_LABELS]> {
    let idx = label as usize;
    if idx >= NUM_LABELS {
        return Err(Error::Validation(format!("label {label} outside 0..{NUM_LABELS}")));
    }
    let mut out = [0.0; NUM_LABELS];
    out[idx] = 1.0;
    Ok(out)
}

pub fn build_line_graph(sub: &EnclosingSubgraph) -> VectorLineGraph {
    let dim = sub.dim;
    let (ti, tj) = EnclosingSubgraph::TARGET;
    let mut vnodes = Vec::with_capacity(sub.edges.len());
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); sub.num_nodes()];
    for (idx, &(a, b)) in sub.edges.iter().enumerate() {
        let (tail, head) = if (a, b) == (ti, tj) {
            (ti, tj)
        } else {
            let key = |x: usize| (sub.hops[x], sub.local_to_global[x]);
            if key(a) <= key(b) {
                (a, b)
            } else {
                (b, a)
            }
        };
        let embedding = sub
            .coord(head)
            .iter()
            .zip(sub.coord(tail))
            .map(|(h, t)| h - t)
            .collect();
        vnodes.push(VectorNode {
            tail,
            head,
            embedding,
            label: LABEL_OTHER,
        });
        incident[a].push(idx);
        incident[b].push(idx);
    }
    let mut vadj = vec![Vec::new(); vnodes.len()];
    for group in &incident {
        for &x in group {
            for &y in group {
                if x != y {
                    vadj[x].push(y);
                }
            }
        }
    }
    for row in &mut vadj {
        row.sort_unstable();
        row.dedup();
    }
    let mut vlg = VectorLineGraph {
        dim,
        vnodes,
        vadj,
        target_vnode: 0,
        incident_i: incident[ti].clone(),
        incident_j: incident[tj].clone(),
        local_to_global: sub.local_to_global.clone(),
    };
    assign_labels(&mut vlg);
    vlg
}

/// Labeling trick: 0 for the target, 1 for edges at `n_i`, 2 for edges at
/// `n_j`, 3 otherwise. An edge touching both targets gets 1.
pub fn assign_labels(vlg: &mut VectorLineGraph) {
    let (ti, tj) = EnclosingSubgraph::TARGET;
    let target = vlg.target_vnode;
    for (idx, n) in vlg.vnodes.iter_mut().enumerate() {
        let touches = |x: usize| n.tail == x || n.head == x;
        n.label = if idx == target {
            LABEL_TARGET
        } else if touches(ti) {
            LABEL_NEAR_I
        } else if touches(tj) {
            LABEL_NEAR_J
        } else {
            LABEL_OTHER
        };
    }
}
