//! Scaled dot-product multi-head attention over variable-size groups.

use std::sync::Arc;

use rand::Rng;
use ndarray::Array2;

use super::{xavier_uniform, ParamId, ParamStore, SparseRows, Tape, Var};
use crate::error::{Error, Result};

/// Q/K/V/output projections, each `d × d` with a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub d: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("dimension {d} not divisible by {heads} heads")));
        }
        let mut proj = |name: &str| {
            let w = store.add(format!("{prefix}.{name}.weight"), xavier_uniform(rng, d, d));
            let b = store.add(format!("{prefix}.{name}.bias"), Array2::zeros((1, d)));
            (w, b)
        };
        let (wq, bq) = proj("q");
        let (wk, bk) = proj("k");
        let (wv, bv) = proj("v");
        let (wo, bo) = proj("out");
        Ok(Self { d, heads, wq, bq, wk, bk, wv, bv, wo, bo })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// One row per query, `n × d`.
    pub output: Var,
    /// Attention weights, one row per (query, member) pair and one column per head.
    pub weights: Var,
    /// Rows of `weights` belonging to each query.
    pub segments: Arc<Vec<std::ops::Range<usize>>>,
}

/// Query row `i` attends over the key/value rows listed in `groups[i]`.
///
/// Per head `h`: `softmax(q_h K_h^T / sqrt(d / heads)) V_h`; heads are
/// concatenated and passed through the output projection.
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    p: &AttentionParams,
    queries: Var,
    keys: Var,
    values: Var,
    groups: &[Vec<usize>],
) -> Result<AttentionOutput> {
    if p.heads == 0 || p.d % p.heads != 0 {
        return Err(Error::Config(format!("dimension {} not divisible by {} heads", p.d, p.heads)));
    }
    let (nq, dq) = tape.shape(queries);
    let (nk, dk) = tape.shape(keys);
    let (nv, dv) = tape.shape(values);
    if dq != p.d || dk != p.d || dv != p.d || nk != nv {
        return Err(Error::Shape(format!(
            "attention inputs q {nq}x{dq}, k {nk}x{dk}, v {nv}x{dv} for d = {}",
            p.d
        )));
    }
    if groups.len() != nq {
        return Err(Error::Shape(format!("{} groups for {nq} queries", groups.len())));
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::Domain(format!("query {i} attends over an empty set")));
    }
    if let Some(&j) = groups.iter().flatten().find(|&&j| j >= nk) {
        return Err(Error::Shape(format!("group member {j} out of {nk} key rows")));
    }

    let mut owner = Vec::new();
    let mut member = Vec::new();
    let mut segments = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let start = member.len();
        owner.extend(std::iter::repeat_n(i, g.len()));
        member.extend_from_slice(g);
        segments.push(start..member.len());
    }
    let segments = Arc::new(segments);

    let (wq, bq, wk, bk, wv, bv, wo, bo) = (
        tape.param(p.wq),
        tape.param(p.bq),
        tape.param(p.wk),
        tape.param(p.bk),
        tape.param(p.wv),
        tape.param(p.bv),
        tape.param(p.wo),
        tape.param(p.bo),
    );
    let q = tape.linear(queries, wq, Some(bq))?;
    let k = tape.linear(keys, wk, Some(bk))?;
    let v = tape.linear(values, wv, Some(bv))?;

    let q_pairs = tape.sparse(Arc::new(SparseRows::gather(&owner, nq)), q)?;
    let gather_members = Arc::new(SparseRows::gather(&member, nk));
    let k_pairs = tape.sparse(gather_members.clone(), k)?;
    let v_pairs = tape.sparse(gather_members, v)?;

    let scale = 1.0 / (p.head_dim() as f64).sqrt();
    let scores = tape.head_dot(q_pairs, k_pairs, p.heads, scale)?;
    let weights = tape.segment_softmax(scores, segments.clone())?;
    let weighted = tape.scale_heads(v_pairs, weights)?;
    let pooled = tape.sparse(Arc::new(SparseRows::segment_sum(&segments, member.len())), weighted)?;
    let output = tape.linear(pooled, wo, Some(bo))?;
    Ok(AttentionOutput { output, weights, segments })
}
