//! Reverse-mode differentiation over a linear tape.
//!
//! Only the operations used by the clip encoder and the ordering losses are
//! provided. Values are `rows x cols` row-major `f64` buffers; a column vector is
//! `n x 1`. Leaves may borrow their data (model parameters) so building a tape
//! per example does not copy weights.

pub mod check;

use std::borrow::Cow;

use crate::sketch::{self, CircularConvolver};
use crate::{Error, Result};

/// Lower bound on `|x|` inside the signed square root derivative.
pub const SIGNED_SQRT_CLAMP: f64 = 1e-8;
/// Added to the norm in l2 normalization.
pub const L2_EPS: f64 = 1e-12;

/// A dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::arg(format!("tensor {rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn column(data: Vec<f64>) -> Self {
        Self { rows: data.len(), cols: 1, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Whether weight decay applies (weights yes, biases no).
    pub decay: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, decay: bool) -> Self {
        let grad = Tensor::zeros(value.rows, value.cols);
        Self { name: name.into(), value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    AddBias,
    Relu,
    Abs,
    SignedSqrt,
    L2Normalize,
    SketchColumns,
    SketchTemporal,
    CircConv,
    SumCols,
    MeanCols,
    FlattenCols,
    PairLoss,
    Hinge,
    Add,
    Scale,
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Abs(Var),
    SignedSqrt(Var),
    L2Normalize { x: Var, norm: f64 },
    SketchColumns { x: Var, h: &'a [usize], s: &'a [i8] },
    SketchTemporal { x: Var, h: &'a [usize], s: &'a [i8] },
    CircConv { a: Var, b: Var, conv: &'a CircularConvolver },
    SumCols(Var),
    MeanCols(Var),
    FlattenCols(Var),
    PairLoss(Var, Var),
    Hinge { x: Var, margin: f64 },
    Add(Var, Var),
    Scale(Var, f64),
}

impl Op<'_> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Relu(_) => OpKind::Relu,
            Op::Abs(_) => OpKind::Abs,
            Op::SignedSqrt(_) => OpKind::SignedSqrt,
            Op::L2Normalize { .. } => OpKind::L2Normalize,
            Op::SketchColumns { .. } => OpKind::SketchColumns,
            Op::SketchTemporal { .. } => OpKind::SketchTemporal,
            Op::CircConv { .. } => OpKind::CircConv,
            Op::SumCols(_) => OpKind::SumCols,
            Op::MeanCols(_) => OpKind::MeanCols,
            Op::FlattenCols(_) => OpKind::FlattenCols,
            Op::PairLoss(..) => OpKind::PairLoss,
            Op::Hinge { .. } => OpKind::Hinge,
            Op::Add(..) => OpKind::Add,
            Op::Scale(..) => OpKind::Scale,
        }
    }
}

struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Cow<'a, [f64]>,
    op: Op<'a>,
}

/// Recorded computation for one example.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    fault: Option<OpKind>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` if no gradient flowed into `var`.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        self.get(var).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }
}

fn signed_sqrt(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum() * v.abs().sqrt()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), fault: None }
    }

    /// Corrupts the backward rule of `op` by scaling its input gradients. Only
    /// useful for confirming that gradient checks catch a wrong rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, op: OpKind) {
        self.fault = Some(op);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    fn push(&mut self, rows: usize, cols: usize, value: Cow<'a, [f64]>, op: Op<'a>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, detail: String) -> Error {
        Error::Shape { node: self.nodes.len(), detail }
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t.rows, t.cols, Cow::Owned(t.data), Op::Leaf)
    }

    /// A leaf that borrows `t` for the lifetime of the tape.
    pub fn leaf_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(t.rows, t.cols, Cow::Borrowed(&t.data), Op::Leaf)
    }

    /// `W x` for `W: m x n` and `x: n x t`.
    pub fn matmul(&mut self, w: Var, x: Var) -> Result<Var> {
        let (m, n) = self.shape(w);
        let (n2, t) = self.shape(x);
        if n != n2 {
            return Err(self.shape_err(format!("matmul {m}x{n} by {n2}x{t}")));
        }
        let (wv, xv) = (self.value(w), self.value(x));
        let mut out = vec![0.0; m * t];
        for i in 0..m {
            let row = &wv[i * n..(i + 1) * n];
            let dst = &mut out[i * t..(i + 1) * t];
            for (k, &wik) in row.iter().enumerate() {
                let src = &xv[k * t..(k + 1) * t];
                for (o, &xk) in dst.iter_mut().zip(src) {
                    *o += wik * xk;
                }
            }
        }
        Ok(self.push(m, t, Cow::Owned(out), Op::MatMul(w, x)))
    }

    /// Adds the column vector `b` to every column of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, t) = self.shape(x);
        if self.shape(b) != (m, 1) {
            return Err(self.shape_err(format!("bias {:?} for {m}x{t}", self.shape(b))));
        }
        let bv = self.value(b);
        let out: Vec<f64> = self.value(x).iter().enumerate().map(|(k, v)| v + bv[k / t]).collect();
        Ok(self.push(m, t, Cow::Owned(out), Op::AddBias(x, b)))
    }

    /// `W x + b`.
    pub fn linear(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let y = self.matmul(w, x)?;
        self.add_bias(y, b)
    }

    fn unary(&mut self, x: Var, op: Op<'a>, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(r, c, Cow::Owned(out), op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// `sign(x) * sqrt(|x|)`, elementwise.
    pub fn signed_sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::SignedSqrt(x), signed_sqrt)
    }

    /// `x / (||x|| + eps)` over all entries.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let norm = self.value(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = 1.0 / (norm + L2_EPS);
        let out = self.value(x).iter().map(|v| v * scale).collect();
        self.push(r, c, Cow::Owned(out), Op::L2Normalize { x, norm })
    }

    /// Per-column count sketch of a `c x t` input into `d x t`, one sign per channel.
    pub fn sketch_columns(&mut self, x: Var, h: &'a [usize], s: &'a [i8], d: usize) -> Result<Var> {
        let (c, t) = self.shape(x);
        if h.len() != c || s.len() != c {
            return Err(self.shape_err(format!("sketch for {} channels applied to {c}", h.len())));
        }
        let out = sketch::scatter_columns(self.value(x), c, t, h, s, d);
        Ok(self.push(d, t, Cow::Owned(out), Op::SketchColumns { x, h, s }))
    }

    /// Temporal count sketch of a `c x t` input into `d x 1`, one sign per
    /// (channel, segment).
    pub fn sketch_temporal(&mut self, x: Var, h: &'a [usize], s: &'a [i8], d: usize) -> Result<Var> {
        let (c, t) = self.shape(x);
        if h.len() != c || s.len() != c * t {
            return Err(self.shape_err(format!(
                "temporal sketch for {}x{} applied to {c}x{t}",
                h.len(),
                s.len() / h.len().max(1)
            )));
        }
        let out = sketch::scatter_temporal(self.value(x), c, t, h, s, d);
        Ok(self.push(d, 1, Cow::Owned(out), Op::SketchTemporal { x, h, s }))
    }

    /// Column-wise circular convolution of two `d x t` inputs.
    pub fn circ_conv(&mut self, a: Var, b: Var, conv: &'a CircularConvolver) -> Result<Var> {
        let (d, t) = self.shape(a);
        if self.shape(b) != (d, t) || conv.len() != d {
            return Err(self.shape_err(format!(
                "convolution of {d}x{t} with {:?} (plan length {})",
                self.shape(b),
                conv.len()
            )));
        }
        let out = map_columns2(self.value(a), self.value(b), d, t, |ca, cb| conv.convolve(ca, cb));
        Ok(self.push(d, t, Cow::Owned(out), Op::CircConv { a, b, conv }))
    }

    /// Sum over columns: `m x t -> m x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let (m, t) = self.shape(x);
        let out = self.value(x).chunks_exact(t).map(row_sum).collect();
        self.push(m, 1, Cow::Owned(out), Op::SumCols(x))
    }

    /// Mean over columns: `m x t -> m x 1`.
    pub fn mean_cols(&mut self, x: Var) -> Var {
        let (m, t) = self.shape(x);
        let out = self.value(x).chunks_exact(t).map(|row| row_sum(row) / t as f64).collect();
        self.push(m, 1, Cow::Owned(out), Op::MeanCols(x))
    }

    /// Stacks the columns of `m x t` into one `(m*t) x 1` vector, segment 0 first.
    pub fn flatten_cols(&mut self, x: Var) -> Var {
        let (m, t) = self.shape(x);
        let v = self.value(x);
        let mut out = vec![0.0; m * t];
        for i in 0..m {
            for s in 0..t {
                out[s * m + i] = v[i * t + s];
            }
        }
        self.push(m * t, 1, Cow::Owned(out), Op::FlattenCols(x))
    }

    /// `sum_k max(0, a_k - b_k)^2` as a `1 x 1` value.
    pub fn pair_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(format!("pair loss of {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let loss = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| {
                let d = (x - y).max(0.0);
                d * d
            })
            .sum();
        Ok(self.push(1, 1, Cow::Owned(vec![loss]), Op::PairLoss(a, b)))
    }

    /// `max(0, margin - x)` for a scalar `x`.
    pub fn hinge(&mut self, x: Var, margin: f64) -> Result<Var> {
        if self.shape(x) != (1, 1) {
            return Err(self.shape_err(format!("hinge of {:?}", self.shape(x))));
        }
        let v = (margin - self.value(x)[0]).max(0.0);
        Ok(self.push(1, 1, Cow::Owned(vec![v]), Op::Hinge { x, margin }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(b) != (r, c) {
            return Err(self.shape_err(format!("add of {r}x{c} and {:?}", self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(r, c, Cow::Owned(out), Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, Op::Scale(x, k), |v| v * k)
    }

    /// Propagates `seed` (the gradient of the final scalar or tensor `output`)
    /// back through every recorded node in reverse order.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::arg("backward on an empty tape"));
        }
        let out = &self.nodes[output.0];
        if seed.len() != out.rows * out.cols {
            return Err(Error::Shape {
                node: output.0,
                detail: format!("seed gradient has {} values for a {}x{} output", seed.len(), out.rows, out.cols),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.to_vec());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contribs = self.node_backward(node, &g);
            if self.fault == Some(node.op.kind()) {
                for (_, cg) in contribs.iter_mut() {
                    cg.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (input, cg) in contribs {
                let expected = self.nodes[input.0].value.len();
                if cg.len() != expected {
                    return Err(Error::Shape {
                        node: idx,
                        detail: format!("gradient for input {} has {} values, expected {expected}", input.0, cg.len()),
                    });
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&cg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(cg),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node<'a>, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let shape = |v: Var| (self.nodes[v.0].rows, self.nodes[v.0].cols);
        match node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(w, x) => {
                let (m, n) = shape(w);
                let t = node.cols;
                let (wv, xv) = (val(w), val(x));
                let mut gw = vec![0.0; m * n];
                let mut gx = vec![0.0; n * t];
                for i in 0..m {
                    let gi = &g[i * t..(i + 1) * t];
                    for k in 0..n {
                        let xk = &xv[k * t..(k + 1) * t];
                        gw[i * n + k] = gi.iter().zip(xk).map(|(a, b)| a * b).sum();
                        let wik = wv[i * n + k];
                        for (o, &gs) in gx[k * t..(k + 1) * t].iter_mut().zip(gi) {
                            *o += wik * gs;
                        }
                    }
                }
                vec![(w, gw), (x, gx)]
            }
            Op::AddBias(x, b) => {
                let t = node.cols;
                let gb = g.chunks_exact(t).map(row_sum).collect();
                vec![(x, g.to_vec()), (b, gb)]
            }
            Op::Relu(x) => {
                let gx = val(x).iter().zip(g).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                vec![(x, gx)]
            }
            Op::Abs(x) => {
                let gx = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        if v > 0.0 {
                            gv
                        } else if v < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(x, gx)]
            }
            Op::SignedSqrt(x) => {
                let gx =
                    val(x).iter().zip(g).map(|(&v, &gv)| gv * 0.5 / v.abs().max(SIGNED_SQRT_CLAMP).sqrt()).collect();
                vec![(x, gx)]
            }
            Op::L2Normalize { x, norm } => {
                let xv = val(x);
                let s = norm + L2_EPS;
                let gx = if norm > 0.0 {
                    let dot: f64 = xv.iter().zip(g).map(|(a, b)| a * b).sum();
                    let k = dot / (s * s * norm);
                    xv.iter().zip(g).map(|(&xi, &gi)| gi / s - xi * k).collect()
                } else {
                    g.iter().map(|gi| gi / s).collect()
                };
                vec![(x, gx)]
            }
            Op::SketchColumns { x, h, s } => {
                let (c, t) = shape(x);
                vec![(x, sketch::gather_columns(g, c, t, h, s))]
            }
            Op::SketchTemporal { x, h, s } => {
                let (c, t) = shape(x);
                vec![(x, sketch::gather_temporal(g, c, t, h, s))]
            }
            Op::CircConv { a, b, conv } => {
                let (d, t) = (node.rows, node.cols);
                let (av, bv) = (val(a), val(b));
                let mut ga = vec![0.0; d * t];
                let mut gb = vec![0.0; d * t];
                for s in 0..t {
                    let col = |buf: &[f64]| -> Vec<f64> { (0..d).map(|i| buf[i * t + s]).collect() };
                    let (cga, cgb) = conv.convolve_backward(&col(g), &col(av), &col(bv));
                    for i in 0..d {
                        ga[i * t + s] = cga[i];
                        gb[i * t + s] = cgb[i];
                    }
                }
                vec![(a, ga), (b, gb)]
            }
            Op::SumCols(x) | Op::MeanCols(x) => {
                let (m, t) = shape(x);
                let k = if matches!(node.op, Op::MeanCols(_)) { 1.0 / t as f64 } else { 1.0 };
                let mut gx = vec![0.0; m * t];
                for i in 0..m {
                    gx[i * t..(i + 1) * t].iter_mut().for_each(|v| *v = g[i] * k);
                }
                vec![(x, gx)]
            }
            Op::FlattenCols(x) => {
                let (m, t) = shape(x);
                let mut gx = vec![0.0; m * t];
                for i in 0..m {
                    for s in 0..t {
                        gx[i * t + s] = g[s * m + i];
                    }
                }
                vec![(x, gx)]
            }
            Op::PairLoss(a, b) => {
                let ga: Vec<f64> = val(a).iter().zip(val(b)).map(|(x, y)| 2.0 * (x - y).max(0.0) * g[0]).collect();
                let gb = ga.iter().map(|v| -v).collect();
                vec![(a, ga), (b, gb)]
            }
            Op::Hinge { x, margin } => {
                let active = margin - val(x)[0] > 0.0;
                vec![(x, vec![if active { -g[0] } else { 0.0 }])]
            }
            Op::Add(a, b) => vec![(a, g.to_vec()), (b, g.to_vec())],
            Op::Scale(x, k) => vec![(x, g.iter().map(|v| v * k).collect())],
        }
    }
}

fn row_sum(row: &[f64]) -> f64 {
    let mut it = row.iter();
    let first = *it.next().expect("non-empty row");
    it.fold(first, |acc, v| acc + v)
}

fn map_columns2(a: &[f64], b: &[f64], d: usize, t: usize, f: impl Fn(&[f64], &[f64]) -> Vec<f64>) -> Vec<f64> {
    if t == 1 {
        return f(a, b);
    }
    let mut out = vec![0.0; d * t];
    for s in 0..t {
        let ca: Vec<f64> = (0..d).map(|i| a[i * t + s]).collect();
        let cb: Vec<f64> = (0..d).map(|i| b[i * t + s]).collect();
        for (i, v) in f(&ca, &cb).into_iter().enumerate() {
            out[i * t + s] = v;
        }
    }
    out
}
