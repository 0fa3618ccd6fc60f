//! Alternative update functions that replace the GAV layer for comparison.
//!
//! Each maps `len × (d_spatial + 4)` features to `len × d_spatial` vectors so
//! the readout is unchanged.

use std::sync::Arc;

use super::{LayerKind, LayerParams, LineGraphInputs};
use crate::autodiff::{SparseRows, Tape, Var};
use crate::error::{Error, Result};

const GAT_SLOPE: f64 = 0.2;

/// Which learned function an update rule is asking for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiSlot {
    /// The main feature map (the self branch for sage).
    Phi,
    /// The neighbor-mean branch of sage.
    PhiNeighbor,
    /// GAT score contribution of the attending node.
    GatSelf,
    /// GAT score contribution of the attended node.
    GatNeighbor,
}

pub(super) fn apply(tape: &mut Tape<'_>, layer: &LayerParams, inputs: &LineGraphInputs, features: Var) -> Result<Var> {
    let kind = match layer {
        LayerParams::Gav(_) => return Err(Error::Config("gav is not an ablation layer".into())),
        LayerParams::EdgeConv { .. } => LayerKind::EdgeConv,
        LayerParams::Gat { .. } => LayerKind::Gat,
        LayerParams::Sage { .. } => LayerKind::Sage,
        LayerParams::Gcn { .. } => LayerKind::Gcn,
    };
    let mut phi = |t: &mut Tape<'_>, slot: PhiSlot, x: Var| -> Result<Var> {
        match (layer, slot) {
            (LayerParams::EdgeConv { phi } | LayerParams::Gcn { phi }, PhiSlot::Phi) => phi.forward(t, x),
            (LayerParams::Gat { phi, .. }, PhiSlot::Phi) => phi.forward(t, x),
            (LayerParams::Gat { a_self, .. }, PhiSlot::GatSelf) => a_self.forward(t, x),
            (LayerParams::Gat { a_neighbor, .. }, PhiSlot::GatNeighbor) => a_neighbor.forward(t, x),
            (LayerParams::Sage { phi_self, .. }, PhiSlot::Phi) => phi_self.forward(t, x),
            (LayerParams::Sage { phi_neighbor, .. }, PhiSlot::PhiNeighbor) => phi_neighbor.forward(t, x),
            _ => Err(Error::Config(format!("{kind} layer has no {slot:?} function"))),
        }
    };
    ablation_layer(tape, kind, inputs, features, &mut phi)
}

/// One ablation update with caller-supplied learned functions.
///
/// - edgeconv: mean over neighbors `j` of `phi(n_i ∥ n_j - n_i)`, zero without neighbors
/// - gat: `Σ_{j ∈ {i} ∪ N(i)} α_ij phi(n_j)` with `α = softmax_j leaky(a_s·z_i + a_n·z_j)`
/// - sage: `phi(n_i) + phi'(mean_j n_j)`, the mean being zero without neighbors
/// - gcn: `phi(Σ_{j ∈ N(i) ∪ i} n_j / sqrt(d_i d_j))` with self-inclusive degrees
pub fn ablation_layer(
    tape: &mut Tape<'_>,
    kind: LayerKind,
    inputs: &LineGraphInputs,
    features: Var,
    phi: &mut dyn FnMut(&mut Tape<'_>, PhiSlot, Var) -> Result<Var>,
) -> Result<Var> {
    let n = inputs.len();
    match kind {
        LayerKind::Gav => Err(Error::Config("gav is not an ablation layer".into())),
        LayerKind::EdgeConv => {
            let (owner, member) = pairs(&inputs.neighbors);
            let xi = tape.sparse(Arc::new(SparseRows::gather(&owner, n)), features)?;
            let xj = tape.sparse(Arc::new(SparseRows::gather(&member, n)), features)?;
            let diff = tape.sub(xj, xi)?;
            let joined = tape.concat(&[xi, diff])?;
            let messages = phi(tape, PhiSlot::Phi, joined)?;
            let per_owner = segments(&inputs.neighbors);
            tape.sparse(Arc::new(SparseRows::mean(&per_owner, owner.len())), messages)
        }
        LayerKind::Gat => {
            let z = phi(tape, PhiSlot::Phi, features)?;
            let score_self = phi(tape, PhiSlot::GatSelf, z)?;
            let score_neighbor = phi(tape, PhiSlot::GatNeighbor, z)?;
            let (owner, member) = pairs(&inputs.groups);
            let gather_member = Arc::new(SparseRows::gather(&member, n));
            let si = tape.sparse(Arc::new(SparseRows::gather(&owner, n)), score_self)?;
            let sj = tape.sparse(gather_member.clone(), score_neighbor)?;
            let raw = tape.add(si, sj)?;
            let raw = tape.leaky_relu(raw, GAT_SLOPE);
            let ranges = Arc::new(ranges(&inputs.groups));
            let alpha = tape.segment_softmax(raw, ranges.clone())?;
            let zj = tape.sparse(gather_member, z)?;
            let weighted = tape.scale_heads(zj, alpha)?;
            tape.sparse(Arc::new(SparseRows::segment_sum(&ranges, member.len())), weighted)
        }
        LayerKind::Sage => {
            let own = phi(tape, PhiSlot::Phi, features)?;
            let mean = tape.sparse(Arc::new(SparseRows::mean(&inputs.neighbors, n)), features)?;
            let other = phi(tape, PhiSlot::PhiNeighbor, mean)?;
            tape.add(own, other)
        }
        LayerKind::Gcn => {
            let degree: Vec<f64> = inputs.neighbors.iter().map(|r| (r.len() + 1) as f64).collect();
            let rows = inputs
                .groups
                .iter()
                .enumerate()
                .map(|(i, g)| g.iter().map(|&j| (j, 1.0 / (degree[i] * degree[j]).sqrt())).collect::<Vec<_>>());
            let agg = tape.sparse(Arc::new(SparseRows::from_rows(rows, n)), features)?;
            phi(tape, PhiSlot::Phi, agg)
        }
    }
}

fn pairs(groups: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let mut owner = Vec::new();
    let mut member = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        owner.extend(std::iter::repeat_n(i, g.len()));
        member.extend_from_slice(g);
    }
    (owner, member)
}

fn ranges(groups: &[Vec<usize>]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    groups
        .iter()
        .map(|g| {
            let r = start..start + g.len();
            start = r.end;
            r
        })
        .collect()
}

/// Pair indices belonging to each owner, as lists.
fn segments(groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    ranges(groups).into_iter().map(|r| r.collect()).collect()
}
