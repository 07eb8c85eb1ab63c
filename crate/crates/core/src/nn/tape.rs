//! Reverse-mode differentiation over a linear record of matrix primitives.
//!
//! Every value is a row-major [`Matrix`]; scalars are `1 x 1`. Nodes are
//! appended in evaluation order, so walking the record backwards is a valid
//! reverse topological order.

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param { offset: usize },
    MatMul { a: NodeId, b: NodeId, trans_b: bool, alpha: f64 },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow { a: NodeId, row: NodeId },
    MulRow { a: NodeId, row: NodeId },
    Scale { a: NodeId, k: f64 },
    Softmax(NodeId),
    LayerNorm { a: NodeId, inv_std: Vec<f64> },
    Gelu(NodeId),
    Sigmoid(NodeId),
    DepthwiseConv { x: NodeId, w: NodeId },
    StridedConv { x: NodeId, w: NodeId, stride: usize },
    SliceCols { a: NodeId, start: usize },
    SliceRows { a: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    MeanRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Log(NodeId),
    Pow { a: NodeId, p: f64 },
    /// Scalar computed outside the tape, with its local gradient per input.
    Custom { inputs: Vec<NodeId>, grads: Vec<Vec<f64>> },
    /// `sum_k coeffs[k] * inputs[k]` over scalar inputs.
    Combine { inputs: Vec<NodeId>, coeffs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Operation counters accumulated while recording.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TapeStats {
    pub nodes: usize,
    /// Floats held in node values.
    pub value_floats: u64,
    /// Floats in attention score and probability matrices.
    pub attention_floats: u64,
    /// Multiply-add FLOPs of matrix products and convolutions (2 per MAC).
    pub dense_flops: u64,
    /// Dense FLOPs plus an elementwise estimate for every other primitive.
    pub total_flops: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    dense_flops: u64,
    other_flops: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v.data[0]
    }

    pub fn stats(&self) -> TapeStats {
        let value_floats = self.nodes.iter().map(|n| n.value.len() as u64).sum();
        let attention_floats = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Softmax(scores) => Some((n.value.len() + self.value(scores).len()) as u64),
                _ => None,
            })
            .sum();
        TapeStats {
            nodes: self.nodes.len(),
            value_floats,
            attention_floats,
            dense_flops: self.dense_flops,
            total_flops: self.dense_flops + self.other_flops,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn elementwise_cost(&mut self, n: usize, per: u64) {
        self.other_flops += n as u64 * per;
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a named parameter in `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        let (offset, rows, cols) = store.slot(name);
        let value = Matrix::from_vec(rows, cols, store.values()[offset..offset + rows * cols].to_vec());
        self.push(value, Op::Param { offset })
    }

    /// `alpha * a * b` (or `alpha * a * b^T` when `trans_b`).
    pub fn matmul_scaled(&mut self, a: NodeId, b: NodeId, trans_b: bool, alpha: f64) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.shape();
        let (k2, n) = if trans_b { (bv.cols, bv.rows) } else { bv.shape() };
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = Matrix::zeros(m, n);
        gemm(m, k, n, alpha, &av.data, false, &bv.data, trans_b, 0.0, &mut out.data);
        self.dense_flops += 2 * (m * k * n) as u64;
        self.push(out, Op::MatMul { a, b, trans_b, alpha })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_scaled(a, b, false, 1.0)
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Matrix::from_vec(av.rows, av.cols, data);
        self.elementwise_cost(out.len(), 1);
        out
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    fn broadcast_row(&mut self, a: NodeId, row: NodeId, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows, 1, "broadcast operand must be a row vector");
        assert_eq!(av.cols, rv.cols, "broadcast width mismatch");
        let mut out = av.clone();
        for r in out.data.chunks_exact_mut(rv.cols.max(1)) {
            for (x, &y) in r.iter_mut().zip(&rv.data) {
                *x = f(*x, y);
            }
        }
        self.elementwise_cost(out.len(), 1);
        out
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.broadcast_row(a, row, |x, y| x + y);
        self.push(v, Op::AddRow { a, row })
    }

    /// Multiplies every row of `a` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = self.broadcast_row(a, row, |x, y| x * y);
        self.push(v, Op::MulRow { a, row })
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let av = self.value(a);
        let v = Matrix::from_vec(av.rows, av.cols, av.data.iter().map(|x| x * k).collect());
        self.elementwise_cost(v.len(), 1);
        self.push(v, Op::Scale { a, k })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let cols = v.cols.max(1);
        for row in v.data.chunks_exact_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.elementwise_cost(v.len(), 4);
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise standardisation (no affine part; see [`Tape::mul_row`]).
    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let cols = v.cols.max(1);
        let mut inv_std = Vec::with_capacity(v.rows);
        for row in v.data.chunks_exact_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.elementwise_cost(v.len(), 5);
        self.push(v, Op::LayerNorm { a, inv_std })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let data = av
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        let v = Matrix::from_vec(av.rows, av.cols, data);
        self.elementwise_cost(v.len(), 8);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = Matrix::from_vec(av.rows, av.cols, av.data.iter().map(|&x| sigmoid(x)).collect());
        self.elementwise_cost(v.len(), 4);
        self.push(v, Op::Sigmoid(a))
    }

    /// Per-channel convolution along rows with zero "same" padding.
    /// `w` is `[kernel x channels]` with an odd kernel.
    pub fn depthwise_conv(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let (xv, wv) = (self.value(x), self.value(w));
        let (len, ch) = xv.shape();
        let k = wv.rows;
        assert_eq!(wv.cols, ch, "depthwise kernel width mismatch");
        assert!(k % 2 == 1, "depthwise kernel must be odd");
        let pad = (k / 2) as isize;
        let mut out = Matrix::zeros(len, ch);
        for t in 0..len {
            let o = &mut out.data[t * ch..(t + 1) * ch];
            for j in 0..k {
                let src = t as isize + j as isize - pad;
                if src < 0 || src as usize >= len {
                    continue;
                }
                let xr = &xv.data[src as usize * ch..(src as usize + 1) * ch];
                let wr = &wv.data[j * ch..(j + 1) * ch];
                for c in 0..ch {
                    o[c] += wr[c] * xr[c];
                }
            }
        }
        self.dense_flops += 2 * (len * ch * k) as u64;
        self.push(out, Op::DepthwiseConv { x, w })
    }

    /// Non-overlapping per-channel convolution with kernel = stride;
    /// output has `ceil(rows / stride)` rows, the tail zero-padded.
    pub fn strided_conv(&mut self, x: NodeId, w: NodeId, stride: usize) -> NodeId {
        let (xv, wv) = (self.value(x), self.value(w));
        let (len, ch) = xv.shape();
        assert_eq!(wv.shape(), (stride, ch), "strided kernel must be [stride x channels]");
        let out_len = len.div_ceil(stride);
        let mut out = Matrix::zeros(out_len, ch);
        for t in 0..out_len {
            let o = &mut out.data[t * ch..(t + 1) * ch];
            for j in 0..stride {
                let src = t * stride + j;
                if src >= len {
                    break;
                }
                let xr = &xv.data[src * ch..(src + 1) * ch];
                let wr = &wv.data[j * ch..(j + 1) * ch];
                for c in 0..ch {
                    o[c] += wr[c] * xr[c];
                }
            }
        }
        self.dense_flops += 2 * (out_len * stride * ch) as u64;
        self.push(out, Op::StridedConv { x, w, stride })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let av = self.value(a);
        assert!(start + width <= av.cols, "column slice out of range");
        let mut out = Matrix::zeros(av.rows, width);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols { a, start })
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, count: usize) -> NodeId {
        let av = self.value(a);
        assert!(start + count <= av.rows, "row slice out of range");
        let out = Matrix::from_vec(count, av.cols, av.data[start * av.cols..(start + count) * av.cols].to_vec());
        self.push(out, Op::SliceRows { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[at..at + pv.cols].copy_from_slice(pv.row(r));
            }
            at += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Column means, `1 x cols`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let mut out = vec![0.0; av.cols];
        for row in av.rows_iter() {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let n = av.rows as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.elementwise_cost(av.len(), 1);
        self.push(Matrix::row_vector(out), Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.elementwise_cost(self.value(a).len(), 1);
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let s = av.data.iter().sum::<f64>() / av.len() as f64;
        self.elementwise_cost(av.len(), 1);
        self.push(Matrix::scalar(s), Op::Mean(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let v = Matrix::from_vec(av.rows, av.cols, av.data.iter().map(|x| x.ln()).collect());
        self.elementwise_cost(v.len(), 4);
        self.push(v, Op::Log(a))
    }

    pub fn pow(&mut self, a: NodeId, p: f64) -> NodeId {
        let av = self.value(a);
        let v = Matrix::from_vec(av.rows, av.cols, av.data.iter().map(|x| x.powf(p)).collect());
        self.elementwise_cost(v.len(), 4);
        self.push(v, Op::Pow { a, p })
    }

    /// Records a scalar whose value and input gradients were computed
    /// elsewhere (fused loss terms).
    pub fn custom_scalar(&mut self, value: f64, inputs: Vec<NodeId>, grads: Vec<Vec<f64>>) -> NodeId {
        assert_eq!(inputs.len(), grads.len());
        for (i, g) in inputs.iter().zip(&grads) {
            assert_eq!(self.value(*i).len(), g.len(), "custom gradient length mismatch");
        }
        self.push(Matrix::scalar(value), Op::Custom { inputs, grads })
    }

    /// Linear combination of scalar nodes with constant coefficients.
    pub fn combine(&mut self, inputs: &[NodeId], coeffs: &[f64]) -> NodeId {
        assert_eq!(inputs.len(), coeffs.len());
        let v = inputs.iter().zip(coeffs).map(|(&i, c)| c * self.scalar(i)).sum();
        self.push(Matrix::scalar(v), Op::Combine { inputs: inputs.to_vec(), coeffs: coeffs.to_vec() })
    }

    /// Accumulates d(root)/d(param) into `grad` (aligned with the
    /// [`ParamStore`] the parameters were read from).
    pub fn backward_into(&self, root: NodeId, grad: &mut [f64]) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Precondition(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut adj, grad);
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>], grad: &mut [f64]) {
        let y = &node.value;
        match &node.op {
            Op::Input => {}
            Op::Param { offset } => {
                for (dst, d) in grad[*offset..*offset + g.len()].iter_mut().zip(g) {
                    *dst += d;
                }
            }
            Op::MatMul { a, b, trans_b, alpha } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.shape();
                let n = y.cols;
                {
                    let da = slot(adj, *a, av.len());
                    // da = alpha * g * op(b)^T
                    gemm(m, n, k, *alpha, g, false, &bv.data, !*trans_b, 1.0, da);
                }
                let db = slot(adj, *b, bv.len());
                if *trans_b {
                    // b is n x k: db = alpha * g^T * a
                    gemm(n, m, k, *alpha, g, true, &av.data, false, 1.0, db);
                } else {
                    gemm(k, m, n, *alpha, &av.data, true, g, false, 1.0, db);
                }
            }
            Op::Add(a, b) => {
                add_into(slot(adj, *a, g.len()), g);
                add_into(slot(adj, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(adj, *a, g.len()), g);
                let db = slot(adj, *b, g.len());
                for (d, x) in db.iter_mut().zip(g) {
                    *d -= x;
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                let da = slot(adj, *a, g.len());
                for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                    *d += gi * bi;
                }
                let db = slot(adj, *b, g.len());
                for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                    *d += gi * ai;
                }
            }
            Op::AddRow { a, row } => {
                add_into(slot(adj, *a, g.len()), g);
                let cols = y.cols;
                let dr = slot(adj, *row, cols);
                for gr in g.chunks_exact(cols.max(1)) {
                    add_into(dr, gr);
                }
            }
            Op::MulRow { a, row } => {
                let cols = y.cols;
                let rv = &self.value(*row).data;
                let av = &self.value(*a).data;
                {
                    let da = slot(adj, *a, g.len());
                    for (dr, gr) in da.chunks_exact_mut(cols).zip(g.chunks_exact(cols)) {
                        for ((d, gi), r) in dr.iter_mut().zip(gr).zip(rv) {
                            *d += gi * r;
                        }
                    }
                }
                let drow = slot(adj, *row, cols);
                for (gr, ar) in g.chunks_exact(cols).zip(av.chunks_exact(cols)) {
                    for ((d, gi), ai) in drow.iter_mut().zip(gr).zip(ar) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Scale { a, k } => {
                let da = slot(adj, *a, g.len());
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += k * gi;
                }
            }
            Op::Softmax(a) => {
                let cols = y.cols.max(1);
                let da = slot(adj, *a, g.len());
                for ((dr, gr), yr) in da.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(y.data.chunks_exact(cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += yi * (gi - dot);
                    }
                }
            }
            Op::LayerNorm { a, inv_std } => {
                let cols = y.cols.max(1);
                let n = cols as f64;
                let da = slot(adj, *a, g.len());
                for (((dr, gr), yr), inv) in da
                    .chunks_exact_mut(cols)
                    .zip(g.chunks_exact(cols))
                    .zip(y.data.chunks_exact(cols))
                    .zip(inv_std)
                {
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += inv * (gi - mean_g - yi * mean_gy);
                    }
                }
            }
            Op::Gelu(a) => {
                let xv = &self.value(*a).data;
                let da = slot(adj, *a, g.len());
                for ((d, gi), &x) in da.iter_mut().zip(g).zip(xv) {
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    *d += gi * (0.5 * (1.0 + t) + 0.5 * x * dt);
                }
            }
            Op::Sigmoid(a) => {
                let da = slot(adj, *a, g.len());
                for ((d, gi), yi) in da.iter_mut().zip(g).zip(&y.data) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
            Op::DepthwiseConv { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (len, ch) = xv.shape();
                let k = wv.rows;
                let pad = (k / 2) as isize;
                {
                    let dx = slot(adj, *x, xv.len());
                    for t in 0..len {
                        let gr = &g[t * ch..(t + 1) * ch];
                        for j in 0..k {
                            let src = t as isize + j as isize - pad;
                            if src < 0 || src as usize >= len {
                                continue;
                            }
                            let s = src as usize;
                            let wr = &wv.data[j * ch..(j + 1) * ch];
                            let dr = &mut dx[s * ch..(s + 1) * ch];
                            for c in 0..ch {
                                dr[c] += wr[c] * gr[c];
                            }
                        }
                    }
                }
                let dw = slot(adj, *w, wv.len());
                for t in 0..len {
                    let gr = &g[t * ch..(t + 1) * ch];
                    for j in 0..k {
                        let src = t as isize + j as isize - pad;
                        if src < 0 || src as usize >= len {
                            continue;
                        }
                        let s = src as usize;
                        let xr = &xv.data[s * ch..(s + 1) * ch];
                        let dr = &mut dw[j * ch..(j + 1) * ch];
                        for c in 0..ch {
                            dr[c] += xr[c] * gr[c];
                        }
                    }
                }
            }
            Op::StridedConv { x, w, stride } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (len, ch) = xv.shape();
                let out_len = y.rows;
                {
                    let dx = slot(adj, *x, xv.len());
                    for t in 0..out_len {
                        let gr = &g[t * ch..(t + 1) * ch];
                        for j in 0..*stride {
                            let s = t * stride + j;
                            if s >= len {
                                break;
                            }
                            let wr = &wv.data[j * ch..(j + 1) * ch];
                            let dr = &mut dx[s * ch..(s + 1) * ch];
                            for c in 0..ch {
                                dr[c] += wr[c] * gr[c];
                            }
                        }
                    }
                }
                let dw = slot(adj, *w, wv.len());
                for t in 0..out_len {
                    let gr = &g[t * ch..(t + 1) * ch];
                    for j in 0..*stride {
                        let s = t * stride + j;
                        if s >= len {
                            break;
                        }
                        let xr = &xv.data[s * ch..(s + 1) * ch];
                        let dr = &mut dw[j * ch..(j + 1) * ch];
                        for c in 0..ch {
                            dr[c] += xr[c] * gr[c];
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let (cols, width) = (av.cols, y.cols);
                let da = slot(adj, *a, av.len());
                for r in 0..y.rows {
                    add_into(&mut da[r * cols + start..r * cols + start + width], &g[r * width..(r + 1) * width]);
                }
            }
            Op::SliceRows { a, start } => {
                let av = self.value(*a);
                let cols = av.cols;
                let da = slot(adj, *a, av.len());
                add_into(&mut da[start * cols..start * cols + g.len()], g);
            }
            Op::ConcatCols(parts) => {
                let cols = y.cols;
                let mut at = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols;
                    let dp = slot(adj, p, pv.len());
                    for r in 0..y.rows {
                        add_into(&mut dp[r * w..(r + 1) * w], &g[r * cols + at..r * cols + at + w]);
                    }
                    at += w;
                }
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let n = av.rows as f64;
                let cols = av.cols.max(1);
                let da = slot(adj, *a, av.len());
                for dr in da.chunks_exact_mut(cols) {
                    for (d, gi) in dr.iter_mut().zip(g) {
                        *d += gi / n;
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                slot(adj, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let s = g[0] / n as f64;
                slot(adj, *a, n).iter_mut().for_each(|d| *d += s);
            }
            Op::Log(a) => {
                let xv = &self.value(*a).data;
                let da = slot(adj, *a, g.len());
                for ((d, gi), x) in da.iter_mut().zip(g).zip(xv) {
                    *d += gi / x;
                }
            }
            Op::Pow { a, p } => {
                let xv = &self.value(*a).data;
                let da = slot(adj, *a, g.len());
                for ((d, gi), x) in da.iter_mut().zip(g).zip(xv) {
                    *d += gi * p * x.powf(p - 1.0);
                }
            }
            Op::Custom { inputs, grads } => {
                for (&inp, local) in inputs.iter().zip(grads) {
                    let d = slot(adj, inp, local.len());
                    for (di, li) in d.iter_mut().zip(local) {
                        *di += g[0] * li;
                    }
                }
            }
            Op::Combine { inputs, coeffs } => {
                for (&inp, c) in inputs.iter().zip(coeffs) {
                    slot(adj, inp, 1)[0] += g[0] * c;
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    adj[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient of `root` with respect to every parameter of `store`.
pub fn backward(tape: &Tape, root: NodeId, store: &ParamStore) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; store.len()];
    tape.backward_into(root, &mut grad)?;
    Ok(grad)
}
