//! Invariance probes, interpretability export and flow statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LinkSample;
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::linegraph::{build_line_graph, VectorLineGraph};
use crate::model::{record_from, GavModel, PredictionRecord};
use crate::subgraph::{extract_enclosing_subgraph, EnclosingSubgraph};

/// Welford's update, which is exactly zero for identical values.
fn population_std(xs: &[f64]) -> f64 {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (m2 / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationReport {
    pub baseline_logit: f64,
    pub logits: Vec<f64>,
    /// Largest |logit - baseline| over all shifts.
    pub max_abs_diff: f64,
    /// Standard deviation of the predicted probability over baseline and shifts.
    pub std: f64,
}

/// Predicts `(u, v)` on globally shifted copies of `g`.
///
/// Embeddings are coordinate differences, so shifts by integers of
/// integer-valued coordinates leave every logit bitwise unchanged.
pub fn translation_invariance(
    model: &GavModel,
    g: &SpatialGraph,
    u: usize,
    v: usize,
    shifts: &[Vec<f64>],
) -> Result<TranslationReport> {
    let baseline = model.predict(g, u, v, None)?;
    let mut probs = vec![baseline.probability];
    let mut logits = Vec::with_capacity(shifts.len());
    for shift in shifts {
        let rec = model.predict(&g.translated(shift)?, u, v, None)?;
        logits.push(rec.logit);
        probs.push(rec.probability);
    }
    let max_abs_diff = logits.iter().map(|l| (l - baseline.logit).abs()).fold(0.0, f64::max);
    Ok(TranslationReport {
        baseline_logit: baseline.logit,
        logits,
        max_abs_diff,
        std: population_std(&probs),
    })
}

/// Deterministic integer shifts used by the harness.
pub fn integer_shifts(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = crate::rng::stream(seed, "invariance.shifts");
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(-1000i64..=1000) as f64).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSweep {
    pub axis: String,
    /// Predicted probability at 0°, 1°, …, 359°.
    pub probabilities: Vec<f64>,
    pub std: f64,
}

/// Rotation of the local coordinates about one axis, in degrees.
pub fn rotate(coords: &[f64], dim: usize, axis: usize, degrees: f64) -> Vec<f64> {
    let (s, c) = degrees.to_radians().sin_cos();
    let (a, b) = match (dim, axis) {
        (2, _) => (0, 1),
        (_, 0) => (1, 2),
        (_, 1) => (2, 0),
        _ => (0, 1),
    };
    let mut out = coords.to_vec();
    if degrees == 0.0 {
        return out;
    }
    for p in out.chunks_mut(dim) {
        let (x, y) = (p[a], p[b]);
        p[a] = c * x - s * y;
        p[b] = s * x + c * y;
    }
    out
}

/// Rotates the enclosing subgraph of `(u, v)` in 1° steps about every axis
/// (a single in-plane axis in 2D) and records the predicted probabilities.
pub fn rotation_sweep(model: &GavModel, g: &SpatialGraph, u: usize, v: usize) -> Result<Vec<AxisSweep>> {
    let sub = extract_enclosing_subgraph(g, u.min(v), u.max(v), model.config.h)?;
    let dim = sub.dim;
    let axes: &[(usize, &str)] = if dim == 2 { &[(2, "z")] } else { &[(0, "x"), (1, "y"), (2, "z")] };
    axes.iter()
        .map(|&(axis, name)| {
            let probabilities = (0..360)
                .into_par_iter()
                .map(|deg| {
                    let rotated = sub.with_coords(rotate(&sub.local_coords, dim, axis, deg as f64));
                    Ok(model.evaluate_line_graph(&build_line_graph(&rotated))?.probability)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AxisSweep {
                axis: name.to_string(),
                std: population_std(&probabilities),
                probabilities,
            })
        })
        .collect()
}

/// Oriented edge after applying the sign of its scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEdge {
    pub tail: usize,
    pub head: usize,
    pub magnitude: f64,
    pub s: f64,
    pub flipped: bool,
    pub target: bool,
}

/// Flip rule: a negative scale reverses the edge, the magnitude is `|s|`.
pub fn flow_edge(tail: usize, head: usize, s: f64, target: bool) -> FlowEdge {
    let flipped = s < 0.0;
    let (tail, head) = if flipped { (head, tail) } else { (tail, head) };
    FlowEdge {
        tail,
        head,
        magnitude: s.abs(),
        s,
        flipped,
        target,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRecord {
    pub u: usize,
    pub v: usize,
    pub label: Option<u8>,
    pub probability: f64,
    pub logit: f64,
    pub angle_degrees: f64,
    pub edges: Vec<FlowEdge>,
}

fn gav_only(model: &GavModel) -> Result<()> {
    if model.config.layer != crate::model::LayerKind::Gav {
        return Err(Error::Config(format!(
            "{} layers have no scale factors to explain",
            model.config.layer
        )));
    }
    Ok(())
}

/// Prediction plus the line graph it was computed on.
pub fn predict_with_graph(model: &GavModel, g: &SpatialGraph, s: &LinkSample) -> Result<(PredictionRecord, VectorLineGraph)> {
    let vlg = model.line_graph(g, s.u, s.v)?;
    let eval = model.evaluate_line_graph(&vlg)?;
    Ok((record_from(&vlg, &eval, s.u.min(s.v), s.u.max(s.v), Some(s.label)), vlg))
}

pub fn explain_record(rec: &PredictionRecord, target_vnode: usize) -> ExplainRecord {
    ExplainRecord {
        u: rec.u,
        v: rec.v,
        label: rec.label,
        probability: rec.probability,
        logit: rec.logit,
        angle_degrees: rec.angle_degrees,
        edges: rec
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| flow_edge(e.tail, e.head, e.s, i == target_vnode))
            .collect(),
    }
}

/// Per-sample interpretability records in sample order.
pub fn explain(model: &GavModel, g: &SpatialGraph, samples: &[LinkSample]) -> Result<Vec<ExplainRecord>> {
    gav_only(model)?;
    samples
        .par_iter()
        .map(|s| {
            let (rec, vlg) = predict_with_graph(model, g, s)?;
            Ok(explain_record(&rec, vlg.target_vnode))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowRole {
    Source,
    Sink,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    Consistent,
    Inconsistent,
    Undefined,
}

/// Role of local node `node` among the flipped non-target edges touching it;
/// `None` if no such edge exists.
pub fn flow_role(edges: &[FlowEdge], node: usize) -> Option<FlowRole> {
    let mut out = 0;
    let mut into = 0;
    for e in edges.iter().filter(|e| !e.target) {
        if e.tail == node {
            out += 1;
        } else if e.head == node {
            into += 1;
        }
    }
    match (out, into) {
        (0, 0) => None,
        (_, 0) => Some(FlowRole::Source),
        (0, _) => Some(FlowRole::Sink),
        _ => Some(FlowRole::Mixed),
    }
}

/// A sample is consistent when each target node is a pure sink or a pure
/// source (target edge excluded), undefined when a target has no other edge.
pub fn consistency(edges: &[FlowEdge], n_i: usize, n_j: usize) -> Consistency {
    match (flow_role(edges, n_i), flow_role(edges, n_j)) {
        (None, _) | (_, None) => Consistency::Undefined,
        (Some(FlowRole::Mixed), _) | (_, Some(FlowRole::Mixed)) => Consistency::Inconsistent,
        _ => Consistency::Consistent,
    }
}

pub const CONSISTENCY_DEFINITION: &str = "after flipping edges with negative scale factors, each target node is \
a pure source (all other incident edges point away) or a pure sink (all point toward it); the target edge is \
excluded; samples where a target has no other incident edge are undefined and excluded from the percentage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub consistent: usize,
    pub inconsistent: usize,
    pub undefined: usize,
    /// Consistent share of defined samples, in percent; NaN if none is defined.
    pub percentage: f64,
    pub definition: String,
}

impl ConsistencyReport {
    pub fn from_outcomes(outcomes: &[Consistency]) -> Self {
        let count = |c| outcomes.iter().filter(|&&o| o == c).count();
        let (consistent, inconsistent, undefined) = (
            count(Consistency::Consistent),
            count(Consistency::Inconsistent),
            count(Consistency::Undefined),
        );
        let defined = consistent + inconsistent;
        Self {
            consistent,
            inconsistent,
            undefined,
            percentage: if defined == 0 {
                f64::NAN
            } else {
                100.0 * consistent as f64 / defined as f64
            },
            definition: CONSISTENCY_DEFINITION.to_string(),
        }
    }
}

/// Sink/source consistency over `samples` using the model's learned flips.
pub fn sink_source_consistency(model: &GavModel, g: &SpatialGraph, samples: &[LinkSample]) -> Result<ConsistencyReport> {
    let records = explain(model, g, samples)?;
    let outcomes: Vec<Consistency> = records.iter().map(|r| consistency(&r.edges, r.u, r.v)).collect();
    Ok(ConsistencyReport::from_outcomes(&outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertaintyStats {
    /// Mean |s| over all edges of samples with ŷ > 0.9 or ŷ < 0.1.
    pub certain_mean_abs_s: Option<f64>,
    /// Mean |s| over all edges of samples with 0.4 < ŷ < 0.6.
    pub uncertain_mean_abs_s: Option<f64>,
    pub certain_samples: usize,
    pub uncertain_samples: usize,
}

pub fn certainty_stats(records: &[PredictionRecord]) -> CertaintyStats {
    let mut certain = (0.0, 0usize, 0usize);
    let mut uncertain = (0.0, 0usize, 0usize);
    for r in records {
        let bucket = if r.probability > 0.9 || r.probability < 0.1 {
            &mut certain
        } else if r.probability > 0.4 && r.probability < 0.6 {
            &mut uncertain
        } else {
            continue;
        };
        bucket.0 += r.edges.iter().map(|e| e.s.abs()).sum::<f64>();
        bucket.1 += r.edges.len();
        bucket.2 += 1;
    }
    let mean = |b: (f64, usize, usize)| (b.1 > 0).then(|| b.0 / b.1 as f64);
    CertaintyStats {
        certain_mean_abs_s: mean(certain),
        uncertain_mean_abs_s: mean(uncertain),
        certain_samples: certain.2,
        uncertain_samples: uncertain.2,
    }
}

/// Planar mock bifurcation: an upstream unit edge at `n_j`, the unit target
/// edge, and two unit downstream edges at `n_i` opening by `psi_b` degrees.
///
/// Node ids: `n_i` = 0, `n_j` = 1, upstream = 2, downstream = 3 and 4.
pub fn toy_graph(psi_b: f64, dim: usize) -> Result<SpatialGraph> {
    if !(psi_b > 0.0 && psi_b <= 180.0) {
        return Err(Error::Validation(format!("bifurcation angle must lie in (0, 180], got {psi_b}")));
    }
    let half = (psi_b / 2.0).to_radians();
    let planar = [
        [1.0, 0.0],
        [0.0, 0.0],
        [-1.0, 0.0],
        [1.0 + half.cos(), half.sin()],
        [1.0 + half.cos(), -half.sin()],
    ];
    let rows: Vec<Vec<f64>> = planar
        .iter()
        .map(|p| {
            let mut r = p.to_vec();
            r.resize(dim, 0.0);
            r
        })
        .collect();
    SpatialGraph::from_rows(&rows, &[(0, 1), (1, 2), (0, 3), (0, 4)])
}

pub fn toy_bifurcation(model: &GavModel, psi_b: f64) -> Result<PredictionRecord> {
    let g = toy_graph(psi_b, model.config.d_spatial)?;
    model.predict(&g, 0, 1, None)
}

/// Local subgraph with integer-shifted coordinates, used by tests of the harness.
pub fn shifted_subgraph(sub: &EnclosingSubgraph, shift: &[f64]) -> EnclosingSubgraph {
    let coords = sub
        .local_coords
        .chunks(sub.dim)
        .flat_map(|p| p.iter().zip(shift).map(|(x, s)| x + s).collect::<Vec<_>>())
        .collect();
    sub.with_coords(coords)
}
