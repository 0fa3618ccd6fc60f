//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! row-major `f64` matrices; parameters live in a [`ParamStore`] and are
//! referenced, not copied. [`Tape::backward`] replays the record in reverse
//! and returns exact gradients for every node and parameter.

mod adam;
mod attention;
mod gradcheck;
mod params;

pub use adam::AdamState;
pub use attention::{multi_head_attention, AttentionOutput, AttentionParams};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{kaiming_uniform, xavier_uniform, ParamId, ParamStore, ParamTensor};

use std::borrow::Cow;
use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Row-major entries of `m`, copied only if `m` is not in standard layout.
fn entries(m: &Mat) -> Cow<'_, [f64]> {
    match m.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(m.iter().copied().collect()),
    }
}

fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
    Array2::from_shape_vec((rows, cols), data).expect("buffer matches shape")
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Four-lane dot product; the independent partial sums keep the loop pipelined.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0; 4];
    let (xa, _) = a.as_chunks::<4>();
    let (ya, _) = b.as_chunks::<4>();
    for (x, y) in xa.iter().zip(ya) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    let tail = n - n % 4;
    let rest: f64 = a[tail..].iter().zip(&b[tail..]).map(|(x, y)| x * y).sum();
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + rest
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Constant sparse matrix in compressed row form: row `r` lists
/// `(column, weight)` pairs `entries[offsets[r]..offsets[r + 1]]`.
///
/// Gathers, segment means and normalized neighborhood sums are all products
/// with one of these.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub cols: usize,
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseRows {
    /// Builds the matrix row by row.
    pub fn from_rows<R, I>(rows: R, cols: usize) -> Self
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut offsets = vec![0];
        let mut entries = Vec::new();
        for row in rows {
            entries.extend(row);
            offsets.push(entries.len());
        }
        Self { cols, offsets, entries }
    }

    /// Row `r` selects row `idx[r]` of the operand.
    pub fn gather(idx: &[usize], cols: usize) -> Self {
        Self {
            cols,
            offsets: (0..=idx.len()).collect(),
            entries: idx.iter().map(|&i| (i, 1.0)).collect(),
        }
    }

    /// Row `r` averages the operand rows in `groups[r]`; an empty group yields zeros.
    pub fn mean(groups: &[Vec<usize>], cols: usize) -> Self {
        Self::from_rows(
            groups.iter().map(|g| {
                let w = 1.0 / g.len().max(1) as f64;
                g.iter().map(move |&i| (i, w))
            }),
            cols,
        )
    }

    /// Row `r` sums the contiguous operand rows in `ranges[r]`.
    pub fn segment_sum(ranges: &[Range<usize>], cols: usize) -> Self {
        Self::from_rows(ranges.iter().map(|r| r.clone().map(|i| (i, 1.0))), cols)
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[(usize, f64)]> + '_ {
        self.offsets.windows(2).map(|w| &self.entries[w[0]..w[1]])
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Sparse(Arc<SparseRows>, Var),
    ScaleRows { x: Var, s: Var },
    HeadDot { a: Var, b: Var, heads: usize, scale: f64 },
    SegmentSoftmax { x: Var, segments: Arc<Vec<Range<usize>>> },
    ScaleHeads { v: Var, alpha: Var },
    Bce { z: Var, y: f64 },
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Mat>,
}

/// Record of one forward pass.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Mat>>,
    params: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to a tape node (zero-sized if it did not influence the output).
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params[id.0].as_ref()
    }

    /// Per-parameter gradients in store order.
    pub fn params(&self) -> &[Option<Mat>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Option<Mat>> {
        self.params
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{what}: {a:?} vs {b:?}"))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Numerically stable binary cross-entropy on a logit:
/// `max(z, 0) - z*y + ln(1 + exp(-|z|))`.
pub fn bce_with_logits(z: f64, y: f64) -> Result<f64> {
    if y != 0.0 && y != 1.0 {
        return Err(Error::Validation(format!("label must be 0 or 1, got {y}")));
    }
    if !z.is_finite() {
        return Err(Error::Validation(format!("non-finite logit {z}")));
    }
    Ok(z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(64),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(value)) => value,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    /// Which side of the kink each leaky-ReLU input lies on, in tape order.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::LeakyRelu(a, _) = node.op {
                out.extend(self.value(a).iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x W^T + b` for `x: n × a`, `W: b × a`, `b: 1 × b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ncols() != wv.ncols() {
            return Err(shape_err("linear input vs weight", xv.shape(), wv.shape()));
        }
        let (n, k, o) = (xv.nrows(), xv.ncols(), wv.nrows());
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.dim() != (1, o) {
                    return Err(shape_err("linear bias", bv.shape(), &[1, o]));
                }
                Some(entries(bv))
            }
            None => None,
        };
        let (xs, ws) = (entries(xv), entries(wv));
        let mut y = Vec::with_capacity(n * o);
        for i in 0..n {
            let xr = &xs[i * k..(i + 1) * k];
            for j in 0..o {
                let base = bias.as_ref().map_or(0.0, |b| b[j]);
                y.push(dot(xr, &ws[j * k..(j + 1) * k]) + base);
            }
        }
        let y = from_rows(n, o, y);
        Ok(self.push(Op::Linear { x, w, b }, y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let y = av + bv;
        Ok(self.push(Op::Add(a, b), y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("sub", av.shape(), bv.shape()));
        }
        let y = av - bv;
        Ok(self.push(Op::Sub(a, b), y))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a) * c;
        self.push(Op::Scale(a, c), y)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let y = self.value(a).mapv(|x| leaky_relu(x, slope));
        self.push(Op::LeakyRelu(a, slope), y)
    }

    /// Output is kept strictly inside (-1, 1); `f64::tanh` rounds to ±1 past |x| ≈ 19.
    pub fn tanh(&mut self, a: Var) -> Var {
        const BOUND: f64 = 1.0 - f64::EPSILON / 2.0;
        let y = self.value(a).mapv(|x| x.tanh().clamp(-BOUND, BOUND));
        self.push(Op::Tanh(a), y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), y)
    }

    /// Column-wise concatenation of equally tall operands.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).nrows();
        if let Some(p) = parts.iter().find(|&&p| self.value(p).nrows() != rows) {
            return Err(shape_err("concat rows", &[rows], &[self.value(*p).nrows()]));
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(Op::Concat(parts.to_vec()), y))
    }

    /// `A x` for a constant sparse `A`.
    pub fn sparse(&mut self, a: Arc<SparseRows>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if a.cols != xv.nrows() {
            return Err(shape_err("sparse product", &[a.num_rows(), a.cols], xv.shape()));
        }
        let d = xv.ncols();
        let xs = entries(xv);
        let mut y = Vec::with_capacity(a.num_rows() * d);
        for row in a.rows() {
            let start = y.len();
            match row.split_first() {
                None => y.resize(start + d, 0.0),
                Some((&(c, w), rest)) => {
                    y.extend(xs[c * d..(c + 1) * d].iter().map(|x| w * x));
                    for &(c, w) in rest {
                        axpy(&mut y[start..], w, &xs[c * d..(c + 1) * d]);
                    }
                }
            }
        }
        let y = from_rows(a.num_rows(), d, y);
        Ok(self.push(Op::Sparse(a, x), y))
    }

    /// `y[i, :] = s[i] * x[i, :]` for `s: n × 1`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.dim() != (xv.nrows(), 1) {
            return Err(shape_err("scale_rows", xv.shape(), sv.shape()));
        }
        let mut y = xv.clone();
        for (mut row, &c) in y.rows_mut().into_iter().zip(sv.column(0)) {
            row.mapv_inplace(|v| c * v);
        }
        Ok(self.push(Op::ScaleRows { x, s }, y))
    }

    /// Per-head scaled row dot products: `y[p, h] = scale * <a[p, head h], b[p, head h]>`.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize, scale: f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() || av.ncols() % heads != 0 {
            return Err(shape_err("head_dot", av.shape(), bv.shape()));
        }
        let (n, d) = av.dim();
        let dh = d / heads;
        let (xs, ys) = (entries(av), entries(bv));
        let mut y = Vec::with_capacity(n * heads);
        for p in 0..n {
            for h in 0..heads {
                let cols = p * d + h * dh..p * d + (h + 1) * dh;
                y.push(scale * dot(&xs[cols.clone()], &ys[cols]));
            }
        }
        let y = from_rows(n, heads, y);
        Ok(self.push(Op::HeadDot { a, b, heads, scale }, y))
    }

    /// Column-wise softmax within each contiguous row segment.
    pub fn segment_softmax(&mut self, x: Var, segments: Arc<Vec<Range<usize>>>) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = xv.dim();
        let xs = entries(xv);
        let mut y = vec![0.0; n * d];
        for seg in segments.iter() {
            if seg.end > n || seg.is_empty() {
                return Err(Error::Domain(format!("softmax segment {seg:?} over {n} rows")));
            }
            for c in 0..d {
                let max = seg.clone().fold(f64::NEG_INFINITY, |m, r| m.max(xs[r * d + c]));
                let mut total = 0.0;
                for r in seg.clone() {
                    let e = (xs[r * d + c] - max).exp();
                    y[r * d + c] = e;
                    total += e;
                }
                for r in seg.clone() {
                    y[r * d + c] /= total;
                }
            }
        }
        let y = from_rows(n, d, y);
        Ok(self.push(Op::SegmentSoftmax { x, segments }, y))
    }

    /// `y[p, c] = alpha[p, head(c)] * v[p, c]`.
    pub fn scale_heads(&mut self, v: Var, alpha: Var) -> Result<Var> {
        let (vv, av) = (self.value(v), self.value(alpha));
        if vv.nrows() != av.nrows() || vv.ncols() % av.ncols() != 0 {
            return Err(shape_err("scale_heads", vv.shape(), av.shape()));
        }
        let (n, d) = vv.dim();
        let heads = av.ncols();
        let dh = d / heads;
        let (vs, al) = (entries(vv), entries(av));
        let mut y = vec![0.0; n * d];
        for p in 0..n {
            for h in 0..heads {
                let a = al[p * heads + h];
                let cols = p * d + h * dh..p * d + (h + 1) * dh;
                for (out, v) in y[cols.clone()].iter_mut().zip(&vs[cols]) {
                    *out = a * v;
                }
            }
        }
        let y = from_rows(n, d, y);
        Ok(self.push(Op::ScaleHeads { v, alpha }, y))
    }

    /// Binary cross-entropy of a `1 × 1` logit against label `y`.
    pub fn bce_with_logits(&mut self, z: Var, y: f64) -> Result<Var> {
        let zv = self.value(z);
        if zv.dim() != (1, 1) {
            return Err(shape_err("bce logit", zv.shape(), &[1, 1]));
        }
        let loss = bce_with_logits(zv[[0, 0]], y)?;
        Ok(self.push(Op::Bce { z, y }, Array2::from_elem((1, 1), loss)))
    }

    /// Mean over all entries, as a `1 × 1` node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean().unwrap_or(0.0);
        self.push(Op::Mean(a), Array2::from_elem((1, 1), m))
    }

    /// Reverse pass from a `1 × 1` output seeded with 1.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        self.backward_with_seed(out, Array2::from_elem((1, 1), 1.0))
    }

    pub fn backward_with_seed(&self, out: Var, seed: Mat) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let mut params: Vec<Option<Mat>> = vec![None; self.store.len()];
        grads[out.0] = Some(seed);

        fn acc(slot: &mut Option<Mat>, g: Mat) {
            match slot {
                Some(existing) => *existing += &g,
                None => *slot = Some(g),
            }
        }

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => acc(&mut params[id.0], g.as_standard_layout().into_owned()),
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, k, o) = (xv.nrows(), xv.ncols(), wv.nrows());
                    let (xs, ws, gs) = (entries(xv), entries(wv), entries(&g));
                    let mut dx = vec![0.0; n * k];
                    let mut dw = vec![0.0; o * k];
                    for i in 0..n {
                        for j in 0..o {
                            let gij = gs[i * o + j];
                            axpy(&mut dx[i * k..(i + 1) * k], gij, &ws[j * k..(j + 1) * k]);
                            axpy(&mut dw[j * k..(j + 1) * k], gij, &xs[i * k..(i + 1) * k]);
                        }
                    }
                    acc(&mut grads[x.0], from_rows(n, k, dx));
                    acc(&mut grads[w.0], from_rows(o, k, dw));
                    if let Some(b) = b {
                        acc(&mut grads[b.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads[a.0], g.clone());
                    acc(&mut grads[b.0], -&g);
                }
                Op::Scale(a, c) => acc(&mut grads[a.0], &g * *c),
                Op::LeakyRelu(a, slope) => {
                    let mut d = g.clone();
                    ndarray::Zip::from(&mut d)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= 0.0 {
                                *d *= slope
                            }
                        });
                    acc(&mut grads[a.0], d);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut grads[a.0], &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut grads[a.0], &g * &y.mapv(|t| t * (1.0 - t)));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads[p.0], g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Sparse(a, x) => {
                    let (n, d) = self.value(*x).dim();
                    let gs = entries(&g);
                    let mut dx = vec![0.0; n * d];
                    for (r, row) in a.rows().enumerate() {
                        for &(c, w) in row {
                            axpy(&mut dx[c * d..(c + 1) * d], w, &gs[r * d..(r + 1) * d]);
                        }
                    }
                    acc(&mut grads[x.0], from_rows(n, d, dx));
                }
                Op::ScaleRows { x, s } => {
                    let (xv, sv) = (self.value(*x), self.value(*s));
                    let mut dx = g.clone();
                    let mut ds = Array2::zeros(sv.raw_dim());
                    for i in 0..xv.nrows() {
                        let c = sv[[i, 0]];
                        dx.row_mut(i).mapv_inplace(|v| c * v);
                        ds[[i, 0]] = g.row(i).dot(&xv.row(i));
                    }
                    acc(&mut grads[x.0], dx);
                    acc(&mut grads[s.0], ds);
                }
                Op::HeadDot { a, b, heads, scale } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, d) = av.dim();
                    let dh = d / heads;
                    let (xs, ys, gs) = (entries(av), entries(bv), entries(&g));
                    let coef = |i: usize| scale * gs[(i / d) * heads + (i % d) / dh];
                    let da: Vec<f64> = (0..n * d).map(|i| coef(i) * ys[i]).collect();
                    let db: Vec<f64> = (0..n * d).map(|i| coef(i) * xs[i]).collect();
                    acc(&mut grads[a.0], from_rows(n, d, da));
                    acc(&mut grads[b.0], from_rows(n, d, db));
                }
                Op::SegmentSoftmax { x, segments } => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = Array2::zeros(y.raw_dim());
                    for seg in segments.iter() {
                        for c in 0..y.ncols() {
                            let inner: f64 = seg.clone().map(|r| g[[r, c]] * y[[r, c]]).sum();
                            for r in seg.clone() {
                                d[[r, c]] = y[[r, c]] * (g[[r, c]] - inner);
                            }
                        }
                    }
                    acc(&mut grads[x.0], d);
                }
                Op::ScaleHeads { v, alpha } => {
                    let (vv, av) = (self.value(*v), self.value(*alpha));
                    let (n, d) = vv.dim();
                    let heads = av.ncols();
                    let dh = d / heads;
                    let (vs, al, gs) = (entries(vv), entries(av), entries(&g));
                    let head = |i: usize| (i / d) * heads + (i % d) / dh;
                    let dv: Vec<f64> = (0..n * d).map(|i| al[head(i)] * gs[i]).collect();
                    let mut da = vec![0.0; n * heads];
                    for i in 0..n * d {
                        da[head(i)] += gs[i] * vs[i];
                    }
                    acc(&mut grads[v.0], from_rows(n, d, dv));
                    acc(&mut grads[alpha.0], from_rows(n, heads, da));
                }
                Op::Bce { z, y } => {
                    let zv = self.value(*z)[[0, 0]];
                    acc(&mut grads[z.0], Array2::from_elem((1, 1), g[[0, 0]] * (sigmoid(zv) - y)));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let n = av.len().max(1) as f64;
                    acc(&mut grads[a.0], Array2::from_elem(av.raw_dim(), g[[0, 0]] / n));
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { nodes: grads, params }
    }
}
