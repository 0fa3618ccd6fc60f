//! The GAV message-passing model and its readout.
//!
//! Each line-graph node carries an oriented vector. A layer predicts one
//! scalar `s_i ∈ (-1, 1)` per vector from attention over its neighborhood and
//! rescales (or flips) the vector by it. The readout averages the refined
//! vectors around both target nodes and classifies their concatenation.

mod ablation;
mod layers;

pub use ablation::{ablation_layer, PhiSlot};
pub use layers::{Linear, Mlp};

use std::fmt;
use std::sync::Arc;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{multi_head_attention, xavier_uniform, AttentionParams, Mat, ParamStore, SparseRows, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::linegraph::{build_line_graph, encode_label, VectorLineGraph, NUM_LABELS};
use crate::rng;
use crate::subgraph::extract_enclosing_subgraph;

/// Message-passing update function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gav,
    EdgeConv,
    Gat,
    Sage,
    Gcn,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [Self::Gav, Self::EdgeConv, Self::Gat, Self::Sage, Self::Gcn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gav => "gav",
            Self::EdgeConv => "edgeconv",
            Self::Gat => "gat",
            Self::Sage => "sage",
            Self::Gcn => "gcn",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown layer kind {s:?} (expected gav, edgeconv, gat, sage or gcn)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GavConfig {
    pub d_spatial: usize,
    pub d_message: usize,
    pub heads: usize,
    pub phi2_hidden: usize,
    pub readout_hidden: usize,
    /// Hop radius of the enclosing subgraph.
    pub h: usize,
    /// Message-passing iterations; parameters are shared between iterations.
    pub k: usize,
    pub leaky_slope: f64,
    /// Whether the target vnode contributes to both incident means.
    pub include_target_in_readout: bool,
    pub layer: LayerKind,
    /// Hidden width of the ablation layers' MLPs.
    pub ablation_hidden: usize,
}

impl GavConfig {
    pub fn new(d_spatial: usize) -> Self {
        Self {
            d_spatial,
            d_message: 32,
            heads: 4,
            phi2_hidden: 64,
            readout_hidden: 128,
            h: 1,
            k: 1,
            leaky_slope: 0.01,
            include_target_in_readout: true,
            layer: LayerKind::Gav,
            ablation_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d_spatial) {
            return Err(Error::Config(format!("d_spatial must be 2 or 3, got {}", self.d_spatial)));
        }
        let sizes = [
            ("d_message", self.d_message),
            ("heads", self.heads),
            ("phi2_hidden", self.phi2_hidden),
            ("readout_hidden", self.readout_hidden),
            ("h", self.h),
            ("k", self.k),
            ("ablation_hidden", self.ablation_hidden),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_message % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_message {} not divisible by heads {}",
                self.d_message, self.heads
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config(format!("invalid leaky_slope {}", self.leaky_slope)));
        }
        Ok(())
    }

    /// Width of a layer input: spatial vector plus one-hot label.
    pub fn feature_dim(&self) -> usize {
        self.d_spatial + NUM_LABELS
    }
}

/// Parameters of the GAV layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GavLayerParams {
    pub phi1: Linear,
    pub attn: AttentionParams,
    pub phi2: Mlp,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Gav(GavLayerParams),
    EdgeConv { phi: Mlp },
    Gat { phi: Mlp, a_self: Linear, a_neighbor: Linear },
    Sage { phi_self: Mlp, phi_neighbor: Mlp },
    Gcn { phi: Mlp },
}

/// Tensors derived from one line graph, shared by every forward pass on it.
#[derive(Debug, Clone, PartialEq)]
pub struct LineGraphInputs {
    pub embeddings: Mat,
    pub onehot: Mat,
    /// `{i} ∪ N(i)` with `i` first.
    pub groups: Vec<Vec<usize>>,
    pub neighbors: Vec<Vec<usize>>,
    pub target_vnode: usize,
    pub incident_i: Vec<usize>,
    pub incident_j: Vec<usize>,
}

impl LineGraphInputs {
    pub fn new(vlg: &VectorLineGraph) -> Result<Self> {
        let n = vlg.len();
        let d = vlg.dim;
        let mut embeddings = Array2::zeros((n, d));
        let mut onehot = Array2::zeros((n, NUM_LABELS));
        for (i, node) in vlg.vnodes.iter().enumerate() {
            for (c, &x) in node.embedding.iter().enumerate() {
                embeddings[[i, c]] = x;
            }
            for (c, x) in encode_label(node.label)?.into_iter().enumerate() {
                onehot[[i, c]] = x;
            }
        }
        let groups = vlg
            .vadj
            .iter()
            .enumerate()
            .map(|(i, row)| std::iter::once(i).chain(row.iter().copied()).collect())
            .collect();
        Ok(Self {
            embeddings,
            onehot,
            groups,
            neighbors: vlg.vadj.clone(),
            target_vnode: vlg.target_vnode,
            incident_i: vlg.incident_i.clone(),
            incident_j: vlg.incident_j.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_spatial(&self) -> usize {
        self.embeddings.ncols()
    }

    /// The same line graph with replaced embeddings.
    pub fn with_embeddings(&self, embeddings: Mat) -> Self {
        Self {
            embeddings,
            ..self.clone()
        }
    }
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logit: Var,
    /// Final refined embeddings, `len × d_spatial`.
    pub refined: Var,
    /// Per-iteration `len × 1` scale factors; empty for ablation layers.
    pub s: Vec<Var>,
    pub mean_i: Var,
    pub mean_j: Var,
}

/// Numeric result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub logit: f64,
    pub probability: f64,
    pub angle_degrees: f64,
    /// Product of the per-iteration scale factors, so `refined = s * embedding`.
    pub s: Vec<f64>,
    pub refined: Mat,
}

/// Oriented edge with its scale factor in global ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeScore {
    pub tail: usize,
    pub head: usize,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub u: usize,
    pub v: usize,
    pub label: Option<u8>,
    pub probability: f64,
    pub logit: f64,
    /// NaN when either incident mean is the zero vector.
    pub angle_degrees: f64,
    pub edges: Vec<EdgeScore>,
}

/// Angle in degrees between two vectors; NaN if either is zero.
pub fn angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// One GAV layer: returns `(refined, s)` with `refined_i = s_i * embedding_i`.
pub fn gav_layer(
    tape: &mut Tape<'_>,
    p: &GavLayerParams,
    inputs: &LineGraphInputs,
    embeddings: Var,
    onehot: Var,
) -> Result<(Var, Var)> {
    let features = tape.concat(&[embeddings, onehot])?;
    let pre = p.phi1.forward(tape, features)?;
    let hidden = tape.leaky_relu(pre, p.slope);
    let att = multi_head_attention(tape, &p.attn, hidden, hidden, hidden, &inputs.groups)?;
    let mixed = tape.add(att.output, hidden)?;
    let logit = p.phi2.forward(tape, mixed)?;
    let s = tape.tanh(logit);
    let refined = tape.scale_rows(embeddings, s)?;
    Ok((refined, s))
}

/// Applies `k` layers, re-attaching the one-hot labels before each.
pub fn message_passing(
    tape: &mut Tape<'_>,
    layer: &LayerParams,
    inputs: &LineGraphInputs,
    embeddings: Var,
    k: usize,
) -> Result<(Var, Vec<Var>)> {
    let onehot = tape.input(inputs.onehot.clone());
    let mut current = embeddings;
    let mut scales = Vec::new();
    for _ in 0..k {
        current = match layer {
            LayerParams::Gav(p) => {
                let (refined, s) = gav_layer(tape, p, inputs, current, onehot)?;
                scales.push(s);
                refined
            }
            other => {
                let features = tape.concat(&[current, onehot])?;
                ablation::apply(tape, other, inputs, features)?
            }
        };
    }
    Ok((current, scales))
}

/// Mean refined vectors around both targets, concatenated and classified.
pub fn readout(
    tape: &mut Tape<'_>,
    phi3: &Mlp,
    inputs: &LineGraphInputs,
    refined: Var,
    include_target: bool,
) -> Result<(Var, Var, Var)> {
    let select = |set: &[usize]| -> Vec<usize> {
        let kept: Vec<usize> = set
            .iter()
            .copied()
            .filter(|&x| include_target || x != inputs.target_vnode)
            .collect();
        kept
    };
    let n = inputs.len();
    let mean_i = tape.sparse(Arc::new(SparseRows::mean(&[select(&inputs.incident_i)], n)), refined)?;
    let mean_j = tape.sparse(Arc::new(SparseRows::mean(&[select(&inputs.incident_j)], n)), refined)?;
    let joined = tape.concat(&[mean_i, mean_j])?;
    let logit = phi3.forward(tape, joined)?;
    Ok((logit, mean_i, mean_j))
}

/// Model configuration, parameters and their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GavModel {
    pub config: GavConfig,
    pub store: ParamStore,
    pub layer: LayerParams,
    pub phi3: Mlp,
}

impl GavModel {
    /// Fresh parameters drawn from the `init` stream of `seed`.
    pub fn new(config: GavConfig, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, "init");
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng>(config: GavConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let slope = config.leaky_slope;
        let f = config.feature_dim();
        let d = config.d_spatial;
        let hid = config.ablation_hidden;
        let layer = match config.layer {
            LayerKind::Gav => {
                let phi1 = Linear::new(&mut store, "phi1", f, config.d_message, slope, rng);
                let attn = AttentionParams::new(&mut store, "attn", config.d_message, config.heads, rng)?;
                let phi2 = Mlp::new(&mut store, "phi2", config.d_message, config.phi2_hidden, 1, slope, rng);
                LayerParams::Gav(GavLayerParams { phi1, attn, phi2, slope })
            }
            LayerKind::EdgeConv => LayerParams::EdgeConv {
                phi: Mlp::new(&mut store, "edgeconv.phi", 2 * f, hid, d, slope, rng),
            },
            LayerKind::Gat => {
                let phi = Mlp::new(&mut store, "gat.phi", f, hid, d, slope, rng);
                // The two halves of the attention vector over [z_i ∥ z_j].
                let a = xavier_uniform(rng, 1, 2 * d);
                let mut half = |name: &str, cols: std::ops::Range<usize>| Linear {
                    w: store.add(format!("gat.{name}"), a.slice(ndarray::s![.., cols]).to_owned()),
                    b: None,
                };
                let a_self = half("a_self", 0..d);
                let a_neighbor = half("a_neighbor", d..2 * d);
                LayerParams::Gat { phi, a_self, a_neighbor }
            }
            LayerKind::Sage => LayerParams::Sage {
                phi_self: Mlp::new(&mut store, "sage.phi_self", f, hid, d, slope, rng),
                phi_neighbor: Mlp::new(&mut store, "sage.phi_neighbor", f, hid, d, slope, rng),
            },
            LayerKind::Gcn => LayerParams::Gcn {
                phi: Mlp::new(&mut store, "gcn.phi", f, hid, d, slope, rng),
            },
        };
        let phi3 = Mlp::new(&mut store, "phi3", 2 * d, config.readout_hidden, 1, slope, rng);
        Ok(Self { config, store, layer, phi3 })
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    /// Records the full forward pass of one line graph on `tape`.
    ///
    /// Parameters are read from the tape's store, so the same model layout can
    /// be evaluated against a perturbed copy of `self.store`.
    pub fn forward(&self, tape: &mut Tape<'_>, inputs: &LineGraphInputs) -> Result<Forward> {
        if inputs.d_spatial() != self.config.d_spatial {
            return Err(Error::Shape(format!(
                "line graph has d_spatial {}, model expects {}",
                inputs.d_spatial(),
                self.config.d_spatial
            )));
        }
        let embeddings = tape.input(inputs.embeddings.clone());
        let (refined, s) = message_passing(tape, &self.layer, inputs, embeddings, self.config.k)?;
        let (logit, mean_i, mean_j) =
            readout(tape, &self.phi3, inputs, refined, self.config.include_target_in_readout)?;
        Ok(Forward { logit, refined, s, mean_i, mean_j })
    }

    /// Forward pass plus the training loss for label `y`.
    pub fn loss(&self, tape: &mut Tape<'_>, inputs: &LineGraphInputs, y: f64) -> Result<(Forward, Var)> {
        let fwd = self.forward(tape, inputs)?;
        let loss = tape.bce_with_logits(fwd.logit, y)?;
        Ok((fwd, loss))
    }

    pub fn evaluate(&self, inputs: &LineGraphInputs) -> Result<Evaluation> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, inputs)?;
        let logit = tape.scalar(fwd.logit);
        let mut s = vec![1.0; inputs.len()];
        for var in &fwd.s {
            for (acc, x) in s.iter_mut().zip(tape.value(*var).column(0)) {
                *acc *= x;
            }
        }
        if fwd.s.is_empty() {
            s.clear();
        }
        let a = tape.value(fwd.mean_i).row(0).to_vec();
        let b = tape.value(fwd.mean_j).row(0).to_vec();
        Ok(Evaluation {
            logit,
            probability: crate::autodiff::sigmoid(logit),
            angle_degrees: angle_degrees(&a, &b),
            s,
            refined: tape.value(fwd.refined).clone(),
        })
    }

    pub fn evaluate_line_graph(&self, vlg: &VectorLineGraph) -> Result<Evaluation> {
        self.evaluate(&LineGraphInputs::new(vlg)?)
    }

    /// Line graph of the candidate `(u, v)` in canonical order `u < v`.
    pub fn line_graph(&self, g: &SpatialGraph, u: usize, v: usize) -> Result<VectorLineGraph> {
        let (a, b) = (u.min(v), u.max(v));
        let sub = extract_enclosing_subgraph(g, a, b, self.config.h)?;
        Ok(build_line_graph(&sub))
    }

    /// Subgraph, line graph, message passing and readout for one candidate.
    pub fn predict(&self, g: &SpatialGraph, u: usize, v: usize, label: Option<u8>) -> Result<PredictionRecord> {
        let vlg = self.line_graph(g, u, v)?;
        let eval = self.evaluate_line_graph(&vlg)?;
        Ok(record_from(&vlg, &eval, u.min(v), u.max(v), label))
    }
}

pub fn record_from(vlg: &VectorLineGraph, eval: &Evaluation, u: usize, v: usize, label: Option<u8>) -> PredictionRecord {
    let edges = eval
        .s
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let (tail, head) = vlg.global_orientation(i);
            EdgeScore { tail, head, s }
        })
        .collect();
    PredictionRecord {
        u,
        v,
        label,
        probability: eval.probability,
        logit: eval.logit,
        angle_degrees: eval.angle_degrees,
        edges,
    }
}

#[cfg(test)]
mod tests;
