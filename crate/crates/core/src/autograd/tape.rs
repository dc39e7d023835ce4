//! Matrix-valued reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`].
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because inputs always precede their consumers.
//! A node only receives a gradient when some leaf upstream of it was created
//! with `requires_grad`, or when it is a [`Tape::tap`].

use crate::tensor::{gemm, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleCols(NodeId, Vec<f64>),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gelu(NodeId),
    Sigmoid(NodeId),
    Tap(NodeId),
    Element(NodeId, usize, usize),
    SumScalars(Vec<NodeId>),
    BceWithLogits {
        logits: NodeId,
        targets: Matrix,
        weights: Matrix,
    },
    SquaredError {
        x: NodeId,
        targets: Matrix,
        weights: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
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
        debug_assert_eq!(v.shape(), (1, 1));
        v.data[0]
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let mut value = Matrix::zeros(va.rows, vb.rows);
        gemm(false, va, true, vb, 0.0, &mut value);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        assert_eq!(value.shape(), self.value(b).shape(), "add shape mismatch");
        value.add_assign(self.value(b));
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row);
        assert_eq!(r.rows, 1, "broadcast operand must be a single row");
        assert_eq!(r.cols, self.value(a).cols, "add_row width mismatch");
        let mut value = self.value(a).clone();
        for i in 0..value.rows {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r.data) {
                *v += b;
            }
        }
        let rg = self.requires(a) || self.requires(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: NodeId, f: f64) -> NodeId {
        let mut value = self.value(a).clone();
        value.scale(f);
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, f), rg)
    }

    /// Multiplies column `j` by `factors[j]`.
    pub fn scale_cols(&mut self, a: NodeId, factors: Vec<f64>) -> NodeId {
        let mut value = self.value(a).clone();
        assert_eq!(factors.len(), value.cols);
        for i in 0..value.rows {
            for (v, f) in value.row_mut(i).iter_mut().zip(&factors) {
                *v *= f;
            }
        }
        let rg = self.requires(a);
        self.push(value, Op::ScaleCols(a, factors), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let src = self.value(a);
        assert!(start + width <= src.cols, "slice_cols out of range");
        let mut value = Matrix::zeros(src.rows, width);
        for i in 0..src.rows {
            value
                .row_mut(i)
                .copy_from_slice(&src.row(i)[start..start + width]);
        }
        let rg = self.requires(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                value.row_mut(i)[off..off + v.cols].copy_from_slice(v.row(i));
            }
            off += v.cols;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        for i in 0..value.rows {
            softmax_in_place(value.row_mut(i));
        }
        let rg = self.requires(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × cols`).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let n = xv.cols as f64;
        let mut xhat = Matrix::zeros(xv.rows, xv.cols);
        let mut inv_std = Vec::with_capacity(xv.rows);
        let mut value = Matrix::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..xv.cols {
                let h = (row[j] - mean) * is;
                xhat.data[i * xv.cols + j] = h;
                value.data[i * xv.cols + j] = h * g.data[j] + b.data[j];
            }
        }
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|v| *v = gelu(*v));
        let rg = self.requires(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let mut value = self.value(a).clone();
        value.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rg = self.requires(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Identity node whose gradient is always computed.
    ///
    /// `shift` adds a constant to one entry of the forwarded value without
    /// touching the gradient path; it exists for finite-difference probing.
    pub fn tap(&mut self, a: NodeId, shift: Option<(usize, usize, f64)>) -> NodeId {
        let mut value = self.value(a).clone();
        if let Some((r, c, delta)) = shift {
            let v = value.get(r, c);
            value.set(r, c, v + delta);
        }
        self.push(value, Op::Tap(a), true)
    }

    pub fn element(&mut self, a: NodeId, r: usize, c: usize) -> NodeId {
        let value = Matrix::filled(1, 1, self.value(a).get(r, c));
        let rg = self.requires(a);
        self.push(value, Op::Element(a, r, c), rg)
    }

    pub fn sum_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let total = parts.iter().map(|&p| self.scalar(p)).sum();
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(Matrix::filled(1, 1, total), Op::SumScalars(parts.to_vec()), rg)
    }

    /// `Σ w · BCE(sigmoid(z), t)` evaluated in the numerically stable form.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: Matrix, weights: Matrix) -> NodeId {
        let z = self.value(logits);
        assert_eq!(z.shape(), targets.shape());
        assert_eq!(z.shape(), weights.shape());
        let loss: f64 = z
            .data
            .iter()
            .zip(&targets.data)
            .zip(&weights.data)
            .map(|((&z, &t), &w)| w * (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()))
            .sum();
        let rg = self.requires(logits);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            },
            rg,
        )
    }

    /// `Σ w · (x - t)²`
    pub fn squared_error(&mut self, x: NodeId, targets: Matrix, weights: Matrix) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.shape(), targets.shape());
        assert_eq!(xv.shape(), weights.shape());
        let loss: f64 = xv
            .data
            .iter()
            .zip(&targets.data)
            .zip(&weights.data)
            .map(|((&x, &t), &w)| w * (x - t) * (x - t))
            .sum();
        let rg = self.requires(x);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::SquaredError {
                x,
                targets,
                weights,
            },
            rg,
        )
    }

    /// Backpropagates from a scalar output seeded with 1.
    pub fn backward(&self, output: NodeId) -> Gradients {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        self.backward_with_seed(output, Matrix::filled(1, 1, 1.0))
    }

    pub fn backward_with_seed(&self, output: NodeId, seed: Matrix) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape());
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires(*a) {
                    accumulate_gemm(grads, *a, false, g, true, vb);
                }
                if self.requires(*b) {
                    accumulate_gemm(grads, *b, true, va, false, g);
                }
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires(*a) {
                    accumulate_gemm(grads, *a, false, g, false, vb);
                }
                if self.requires(*b) {
                    accumulate_gemm(grads, *b, true, g, false, va);
                }
            }
            Op::Add(a, b) => {
                for &p in [a, b] {
                    if self.requires(p) {
                        accumulate(grads, p, g.clone());
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.requires(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.requires(*row) {
                    accumulate(grads, *row, column_sums(g));
                }
            }
            Op::Scale(a, f) => {
                if self.requires(*a) {
                    let mut d = g.clone();
                    d.scale(*f);
                    accumulate(grads, *a, d);
                }
            }
            Op::ScaleCols(a, factors) => {
                if self.requires(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows {
                        for (v, f) in d.row_mut(i).iter_mut().zip(factors) {
                            *v *= f;
                        }
                    }
                    accumulate(grads, *a, d);
                }
            }
            Op::SliceCols(a, start) => {
                if self.requires(*a) {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows, src.cols);
                    for i in 0..g.rows {
                        d.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    accumulate(grads, *a, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.requires(p) {
                        let mut d = Matrix::zeros(g.rows, w);
                        for i in 0..g.rows {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        accumulate(grads, p, d);
                    }
                    off += w;
                }
            }
            Op::SoftmaxRows(a) => {
                if self.requires(*a) {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (j, out) in d.row_mut(i).iter_mut().enumerate() {
                            *out = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(grads, *a, d);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gm = self.value(*gamma);
                let (rows, cols) = xhat.shape();
                if self.requires(*gamma) {
                    let mut dg = Matrix::zeros(1, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            dg.data[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                    accumulate(grads, *gamma, dg);
                }
                if self.requires(*beta) {
                    accumulate(grads, *beta, column_sums(g));
                }
                if self.requires(*x) {
                    let n = cols as f64;
                    let mut dx = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..cols {
                            let dh = g.get(i, j) * gm.data[j];
                            sum_d += dh;
                            sum_dx += dh * xhat.get(i, j);
                        }
                        for j in 0..cols {
                            let dh = g.get(i, j) * gm.data[j];
                            dx.set(
                                i,
                                j,
                                inv_std[i] / n * (n * dh - sum_d - xhat.get(i, j) * sum_dx),
                            );
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Gelu(a) => {
                if self.requires(*a) {
                    let src = self.value(*a);
                    let mut d = g.clone();
                    for (dv, &x) in d.data.iter_mut().zip(&src.data) {
                        *dv *= gelu_grad(x);
                    }
                    accumulate(grads, *a, d);
                }
            }
            Op::Sigmoid(a) => {
                if self.requires(*a) {
                    let mut d = g.clone();
                    for (dv, &y) in d.data.iter_mut().zip(&node.value.data) {
                        *dv *= y * (1.0 - y);
                    }
                    accumulate(grads, *a, d);
                }
            }
            Op::Tap(a) => {
                if self.requires(*a) {
                    accumulate(grads, *a, g.clone());
                }
            }
            Op::Element(a, r, c) => {
                if self.requires(*a) {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows, src.cols);
                    d.set(*r, *c, g.data[0]);
                    accumulate(grads, *a, d);
                }
            }
            Op::SumScalars(parts) => {
                for &p in parts {
                    if self.requires(p) {
                        accumulate(grads, p, g.clone());
                    }
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                if self.requires(*logits) {
                    let z = self.value(*logits);
                    let s = g.data[0];
                    let data = z
                        .data
                        .iter()
                        .zip(&targets.data)
                        .zip(&weights.data)
                        .map(|((&z, &t), &w)| s * w * (sigmoid(z) - t))
                        .collect();
                    accumulate(grads, *logits, Matrix::from_vec(z.rows, z.cols, data).unwrap());
                }
            }
            Op::SquaredError {
                x,
                targets,
                weights,
            } => {
                if self.requires(*x) {
                    let xv = self.value(*x);
                    let s = g.data[0];
                    let data = xv
                        .data
                        .iter()
                        .zip(&targets.data)
                        .zip(&weights.data)
                        .map(|((&x, &t), &w)| s * 2.0 * w * (x - t))
                        .collect();
                    accumulate(grads, *x, Matrix::from_vec(xv.rows, xv.cols, data).unwrap());
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, d: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn accumulate_gemm(
    grads: &mut [Option<Matrix>],
    id: NodeId,
    ta: bool,
    a: &Matrix,
    tb: bool,
    b: &Matrix,
) {
    let rows = if ta { a.cols } else { a.rows };
    let cols = if tb { b.rows } else { b.cols };
    match &mut grads[id.0] {
        Some(existing) => gemm(ta, a, tb, b, 1.0, existing),
        slot @ None => {
            let mut out = Matrix::zeros(rows, cols);
            gemm(ta, a, tb, b, 0.0, &mut out);
            *slot = Some(out);
        }
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols);
    for i in 0..g.rows {
        for (o, v) in out.data.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
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

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
