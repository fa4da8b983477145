//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of every node that depends on a bound parameter. Graphs are cheap
//! and single-use: build one per forward pass.

use std::cell::RefCell;
use std::collections::BTreeMap;

use super::kernels::{self, ConvGeometry};
use super::{NumericsError, ParamSet, Tensor};

/// Forward-pass switches used by gradient checking.
#[derive(Clone, Debug, Default)]
pub struct GraphOptions {
    /// Straight-through nodes output their smooth surrogate instead of the
    /// hard (rounded) value.
    pub surrogate: bool,
    /// When set, stop-gradient nodes output these values (in creation order)
    /// instead of their input. Used to hold `sg(.)` arguments constant while
    /// probing with finite differences.
    pub frozen_stop_gradients: Option<Vec<Tensor>>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Gelu(usize),
    Tanh(usize),
    Conv1d { x: usize, k: usize, geom: ConvGeometry },
    ConvT1d { x: usize, k: usize, geom: ConvGeometry },
    Interp { x: usize, src_len: usize },
    StraightThrough { x: usize, derivative: Vec<f64> },
    StopGradient,
    Mse(usize, usize),
    Sum(usize),
    SoftmaxRows(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize },
    Embedding { table: usize, ids: Vec<usize> },
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    SelectRows { x: usize, rows: Vec<usize> },
    MaskedNll { logits: usize, items: Vec<NllItem> },
}

/// One supervised position of a masked negative log-likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NllItem {
    pub row: usize,
    pub target: usize,
    /// Only columns `0..valid` take part in the softmax for this row.
    pub valid: usize,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: BTreeMap<String, usize>,
    stop_gradient_values: Vec<Tensor>,
}

pub struct Graph {
    inner: RefCell<Inner>,
    options: GraphOptions,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, usize>,
}

impl Gradients {
    /// Gradient of a bound parameter (zeros if the loss does not depend on it).
    pub fn param(&self, name: &str) -> Option<Tensor> {
        self.params.get(name).map(|&id| self.node(id))
    }

    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.node(var.id)
    }

    fn node(&self, id: usize) -> Tensor {
        let shape = &self.shapes[id];
        match &self.by_node[id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_options(GraphOptions::default())
    }

    pub fn with_options(options: GraphOptions) -> Self {
        Self {
            inner: RefCell::new(Inner::default()),
            options,
        }
    }

    pub fn options(&self) -> &GraphOptions {
        &self.options
    }

    /// Values emitted by stop-gradient nodes, in creation order.
    pub fn stop_gradient_values(&self) -> Vec<Tensor> {
        self.inner.borrow().stop_gradient_values.clone()
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op, needs_grad });
        Var {
            id: inner.nodes.len() - 1,
            graph: self,
        }
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a named parameter. Binding the same name twice returns the same node.
    pub fn param(&self, params: &ParamSet, name: &str) -> Result<Var<'_>, NumericsError> {
        if let Some(&id) = self.inner.borrow().params.get(name) {
            return Ok(Var { id, graph: self });
        }
        let value = params
            .get(name)
            .ok_or_else(|| NumericsError::MissingParam(name.to_string()))?
            .clone();
        let var = self.push(value, Op::Leaf, true);
        self.inner.borrow_mut().params.insert(name.to_string(), var.id);
        Ok(var)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, NumericsError> {
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        if nodes[loss.id].value.len() != 1 {
            return Err(NumericsError::NotScalar(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else { continue };
            backprop_node(nodes, id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        Ok(Gradients {
            by_node: grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: inner.params.clone(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contribution: impl FnOnce(&mut [f64])) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.len()]);
    contribution(slot);
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn backprop_node(nodes: &[Node], id: usize, grad: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf | Op::StopGradient => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, |g| add_into(g, grad, 1.0));
            accumulate(grads, nodes, *b, |g| add_into(g, grad, 1.0));
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, |g| add_into(g, grad, 1.0));
            accumulate(grads, nodes, *b, |g| add_into(g, grad, -1.0));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
            accumulate(grads, nodes, *a, |g| {
                for i in 0..g.len() {
                    g[i] += grad[i] * vb[i];
                }
            });
            accumulate(grads, nodes, *b, |g| {
                for i in 0..g.len() {
                    g[i] += grad[i] * va[i];
                }
            });
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, |g| add_into(g, grad, *s)),
        Op::AddRow(a, bias) => {
            accumulate(grads, nodes, *a, |g| add_into(g, grad, 1.0));
            let cols = nodes[*bias].value.len();
            accumulate(grads, nodes, *bias, |g| {
                for row in grad.chunks(cols) {
                    add_into(g, row, 1.0);
                }
            });
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
            accumulate(grads, nodes, *a, |g| {
                kernels::gemm(m, n, k, grad, false, tb.data(), true, g, true)
            });
            accumulate(grads, nodes, *b, |g| {
                kernels::gemm(k, m, n, ta.data(), true, grad, false, g, true)
            });
        }
        Op::MatMulT(a, b) => {
            // out = a * b^T with a [m, k], b [n, k]
            let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
            accumulate(grads, nodes, *a, |g| {
                kernels::gemm(m, n, k, grad, false, tb.data(), false, g, true)
            });
            accumulate(grads, nodes, *b, |g| {
                kernels::gemm(n, m, k, grad, true, ta.data(), false, g, true)
            });
        }
        Op::Gelu(a) => {
            let x = nodes[*a].value.data();
            accumulate(grads, nodes, *a, |g| {
                for i in 0..g.len() {
                    g[i] += grad[i] * gelu_grad(x[i]);
                }
            });
        }
        Op::Tanh(a) => {
            let y = node.value.data();
            accumulate(grads, nodes, *a, |g| {
                for i in 0..g.len() {
                    g[i] += grad[i] * (1.0 - y[i] * y[i]);
                }
            });
        }
        Op::Conv1d { x, k, geom } => {
            let gout = Tensor::new(node.value.shape(), grad.to_vec()).expect("grad shape");
            let (dx, dk) = kernels::conv1d_backward(&nodes[*x].value, &nodes[*k].value, geom, &gout);
            accumulate(grads, nodes, *x, |g| add_into(g, &dx, 1.0));
            accumulate(grads, nodes, *k, |g| add_into(g, &dk, 1.0));
        }
        Op::ConvT1d { x, k, geom } => {
            let gout = Tensor::new(node.value.shape(), grad.to_vec()).expect("grad shape");
            let (dx, dk) = kernels::conv_transpose1d_backward(&nodes[*x].value, &nodes[*k].value, geom, &gout);
            accumulate(grads, nodes, *x, |g| add_into(g, &dx, 1.0));
            accumulate(grads, nodes, *k, |g| add_into(g, &dk, 1.0));
        }
        Op::Interp { x, src_len } => {
            let gout = Tensor::new(node.value.shape(), grad.to_vec()).expect("grad shape");
            let dx = kernels::interp_linear_backward(*src_len, &gout);
            accumulate(grads, nodes, *x, |g| add_into(g, &dx, 1.0));
        }
        Op::StraightThrough { x, derivative } => {
            accumulate(grads, nodes, *x, |g| {
                for i in 0..g.len() {
                    g[i] += grad[i] * derivative[i];
                }
            });
        }
        Op::Mse(a, b) => {
            let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
            let scale = 2.0 * grad[0] / va.len() as f64;
            accumulate(grads, nodes, *a, |g| {
                for i in 0..g.len() {
                    g[i] += scale * (va[i] - vb[i]);
                }
            });
            accumulate(grads, nodes, *b, |g| {
                for i in 0..g.len() {
                    g[i] -= scale * (va[i] - vb[i]);
                }
            });
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, |g| g.iter_mut().for_each(|v| *v += grad[0])),
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            let cols = y.cols();
            accumulate(grads, nodes, *a, |g| {
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &grad[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        g[r * cols + c] += yr[c] * (gr[c] - dot);
                    }
                }
            });
        }
        Op::LayerNorm { x, gamma, beta } => {
            let xv = &nodes[*x].value;
            let gv = nodes[*gamma].value.data();
            let cols = xv.cols();
            let rows = xv.rows();
            let mut dx = vec![0.0; xv.len()];
            let mut dgamma = vec![0.0; cols];
            let mut dbeta = vec![0.0; cols];
            for r in 0..rows {
                let (xhat, inv_std) = normalize_row(xv.row(r));
                let gr = &grad[r * cols..(r + 1) * cols];
                let mut mean_d = 0.0;
                let mut mean_dx = 0.0;
                for c in 0..cols {
                    dgamma[c] += gr[c] * xhat[c];
                    dbeta[c] += gr[c];
                    let d = gr[c] * gv[c];
                    mean_d += d;
                    mean_dx += d * xhat[c];
                }
                mean_d /= cols as f64;
                mean_dx /= cols as f64;
                for c in 0..cols {
                    dx[r * cols + c] = inv_std * (gr[c] * gv[c] - mean_d - xhat[c] * mean_dx);
                }
            }
            accumulate(grads, nodes, *x, |g| add_into(g, &dx, 1.0));
            accumulate(grads, nodes, *gamma, |g| add_into(g, &dgamma, 1.0));
            accumulate(grads, nodes, *beta, |g| add_into(g, &dbeta, 1.0));
        }
        Op::Embedding { table, ids } => {
            let cols = nodes[*table].value.cols();
            accumulate(grads, nodes, *table, |g| {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut g[id * cols..(id + 1) * cols], &grad[r * cols..(r + 1) * cols], 1.0);
                }
            });
        }
        Op::SliceCols { x, start } => {
            let (src_cols, width) = (nodes[*x].value.cols(), node.value.cols());
            accumulate(grads, nodes, *x, |g| {
                for r in 0..node.value.rows() {
                    add_into(
                        &mut g[r * src_cols + start..r * src_cols + start + width],
                        &grad[r * width..(r + 1) * width],
                        1.0,
                    );
                }
            });
        }
        Op::ConcatCols(parts) => {
            let total = node.value.cols();
            let mut offset = 0;
            for &p in parts {
                let width = nodes[p].value.cols();
                accumulate(grads, nodes, p, |g| {
                    for r in 0..node.value.rows() {
                        add_into(
                            &mut g[r * width..(r + 1) * width],
                            &grad[r * total + offset..r * total + offset + width],
                            1.0,
                        );
                    }
                });
                offset += width;
            }
        }
        Op::SelectRows { x, rows } => {
            let cols = node.value.cols();
            accumulate(grads, nodes, *x, |g| {
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut g[r * cols..(r + 1) * cols], &grad[i * cols..(i + 1) * cols], 1.0);
                }
            });
        }
        Op::MaskedNll { logits, items } => {
            let lv = &nodes[*logits].value;
            let cols = lv.cols();
            let scale = grad[0] / items.len() as f64;
            accumulate(grads, nodes, *logits, |g| {
                for item in items {
                    let probs = softmax_prefix(lv.row(item.row), item.valid);
                    let dst = &mut g[item.row * cols..item.row * cols + item.valid];
                    for (c, p) in probs.iter().enumerate() {
                        let onehot = if c == item.target { 1.0 } else { 0.0 };
                        dst[c] += scale * (p - onehot);
                    }
                }
            });
        }
    }
}

const LN_EPS: f64 = 1e-5;

fn normalize_row(row: &[f64]) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    (row.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

/// Softmax over the first `valid` entries of `row`.
pub(crate) fn softmax_prefix(row: &[f64], valid: usize) -> Vec<f64> {
    let row = &row[..valid];
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.graph.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.graph.inner.borrow().nodes[self.id].value.data()[0]
    }

    fn needs(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].needs_grad
    }

    fn unary(
        &self,
        op: Op,
        f: impl FnOnce(&Tensor) -> Result<Tensor, NumericsError>,
    ) -> Result<Var<'g>, NumericsError> {
        let value = {
            let inner = self.graph.inner.borrow();
            f(&inner.nodes[self.id].value)?
        };
        Ok(self.graph.push(value, op, self.needs()))
    }

    fn binary(
        &self,
        other: Var<'g>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor, NumericsError>,
    ) -> Result<Var<'g>, NumericsError> {
        let value = {
            let inner = self.graph.inner.borrow();
            f(&inner.nodes[self.id].value, &inner.nodes[other.id].value)?
        };
        let needs = self.needs() || other.needs();
        Ok(self.graph.push(value, op, needs))
    }

    pub fn add(&self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.zip_map(b, |x, y| x + y))
    }

    pub fn sub(&self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.zip_map(b, |x, y| x - y))
    }

    pub fn mul(&self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.zip_map(b, |x, y| x * y))
    }

    pub fn scale(&self, s: f64) -> Result<Var<'g>, NumericsError> {
        self.unary(Op::Scale(self.id, s), |a| Ok(a.map(|x| x * s)))
    }

    /// Adds a `[C]`-sized bias to every row of a `[R, C]` node.
    pub fn add_row(&self, bias: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.binary(bias, Op::AddRow(self.id, bias.id), |a, b| {
            if b.len() != a.cols() {
                return Err(NumericsError::Shape(format!(
                    "add_row: bias {:?} vs rows of {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
            let mut out = a.clone();
            let cols = a.cols();
            for row in out.data_mut().chunks_mut(cols) {
                add_into(row, b.data(), 1.0);
            }
            Ok(out)
        })
    }

    pub fn matmul(&self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.binary(other, Op::MatMul(self.id, other.id), kernels::matmul)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.binary(other, Op::MatMulT(self.id, other.id), |a, b| {
            if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
                return Err(NumericsError::Shape(format!(
                    "matmul_t: {:?} x {:?}^T",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.rows());
            let mut out = vec![0.0; m * n];
            kernels::gemm(m, k, n, a.data(), false, b.data(), true, &mut out, false);
            Tensor::new(&[m, n], out)
        })
    }

    pub fn gelu(&self) -> Result<Var<'g>, NumericsError> {
        self.unary(Op::Gelu(self.id), |a| Ok(a.map(gelu)))
    }

    pub fn tanh(&self) -> Result<Var<'g>, NumericsError> {
        self.unary(Op::Tanh(self.id), |a| Ok(a.map(f64::tanh)))
    }

    pub fn conv1d(&self, kernel: Var<'g>, stride: usize, padding: usize) -> Result<Var<'g>, NumericsError> {
        let geom = {
            let inner = self.graph.inner.borrow();
            ConvGeometry::for_conv(
                &inner.nodes[self.id].value,
                &inner.nodes[kernel.id].value,
                stride,
                padding,
            )?
        };
        self.binary(
            kernel,
            Op::Conv1d {
                x: self.id,
                k: kernel.id,
                geom,
            },
            |x, k| kernels::conv1d(x, k, stride, padding),
        )
    }

    pub fn conv_transpose1d(&self, kernel: Var<'g>, stride: usize, padding: usize) -> Result<Var<'g>, NumericsError> {
        let geom = {
            let inner = self.graph.inner.borrow();
            ConvGeometry::for_conv(
                &inner.nodes[self.id].value,
                &inner.nodes[kernel.id].value,
                stride,
                padding,
            )?
        };
        self.binary(
            kernel,
            Op::ConvT1d {
                x: self.id,
                k: kernel.id,
                geom,
            },
            |x, k| kernels::conv_transpose1d(x, k, stride, padding),
        )
    }

    pub fn interp(&self, target_len: usize) -> Result<Var<'g>, NumericsError> {
        let src_len = self.shape()[0];
        self.unary(Op::Interp { x: self.id, src_len }, |a| {
            kernels::interp_linear(a, target_len)
        })
    }

    /// Elementwise op whose forward output is `hard` and whose backward pass
    /// uses `derivative` (a straight-through estimator). In surrogate mode the
    /// forward output is `surrogate`, the smooth function `derivative` belongs to.
    pub fn straight_through(
        &self,
        hard: Tensor,
        surrogate: Tensor,
        derivative: Vec<f64>,
    ) -> Result<Var<'g>, NumericsError> {
        let shape = self.shape();
        if hard.shape() != shape.as_slice() || surrogate.shape() != shape.as_slice() || derivative.len() != hard.len() {
            return Err(NumericsError::Shape("straight_through: operand shapes differ".into()));
        }
        let value = if self.graph.options.surrogate { surrogate } else { hard };
        Ok(self
            .graph
            .push(value, Op::StraightThrough { x: self.id, derivative }, self.needs()))
    }

    /// Identity in the forward pass, blocks gradients in the backward pass.
    pub fn stop_gradient(&self) -> Var<'g> {
        let mut value = self.value();
        {
            let mut inner = self.graph.inner.borrow_mut();
            let index = inner.stop_gradient_values.len();
            if let Some(frozen) = &self.graph.options.frozen_stop_gradients {
                if let Some(v) = frozen.get(index) {
                    value = v.clone();
                }
            }
            inner.stop_gradient_values.push(value.clone());
        }
        self.graph.push(value, Op::StopGradient, false)
    }

    /// Mean squared error over all elements.
    pub fn mse(&self, other: Var<'g>) -> Result<Var<'g>, NumericsError> {
        self.binary(other, Op::Mse(self.id, other.id), |a, b| {
            a.expect_same_shape(b, "mse")?;
            let n = a.len() as f64;
            let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
            Ok(Tensor::scalar(s / n))
        })
    }

    pub fn sum(&self) -> Result<Var<'g>, NumericsError> {
        self.unary(Op::Sum(self.id), |a| Ok(Tensor::scalar(a.sum())))
    }

    pub fn mean(&self) -> Result<Var<'g>, NumericsError> {
        let n = self.graph.inner.borrow().nodes[self.id].value.len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    pub fn softmax_rows(&self) -> Result<Var<'g>, NumericsError> {
        self.unary(Op::SoftmaxRows(self.id), |a| {
            let cols = a.cols();
            let mut out = a.clone();
            for r in 0..a.rows() {
                let p = softmax_prefix(a.row(r), cols);
                out.row_mut(r).copy_from_slice(&p);
            }
            Ok(out)
        })
    }

    pub fn layer_norm(&self, gamma: Var<'g>, beta: Var<'g>) -> Result<Var<'g>, NumericsError> {
        let value = {
            let inner = self.graph.inner.borrow();
            let (x, g, b) = (
                &inner.nodes[self.id].value,
                &inner.nodes[gamma.id].value,
                &inner.nodes[beta.id].value,
            );
            if g.len() != x.cols() || b.len() != x.cols() {
                return Err(NumericsError::Shape("layer_norm: affine width mismatch".into()));
            }
            let mut out = x.clone();
            for r in 0..x.rows() {
                let (xhat, _) = normalize_row(x.row(r));
                for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                    *o = xhat[c] * g.data()[c] + b.data()[c];
                }
            }
            out
        };
        let needs = self.needs() || gamma.needs() || beta.needs();
        Ok(self.graph.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
            },
            needs,
        ))
    }

    /// Row lookup into an embedding table `[V, C]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var<'g>, NumericsError> {
        let ids = ids.to_vec();
        let op = Op::Embedding {
            table: self.id,
            ids: ids.clone(),
        };
        self.unary(op, |t| {
            if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
                return Err(NumericsError::Shape(format!("embedding id {bad} >= {}", t.rows())));
            }
            let cols = t.cols();
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &i in &ids {
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(&[ids.len(), cols], data)
        })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'g>, NumericsError> {
        self.unary(Op::SliceCols { x: self.id, start }, |a| {
            if start >= end || end > a.cols() {
                return Err(NumericsError::Shape(format!(
                    "slice_cols {start}..{end} of {:?}",
                    a.shape()
                )));
            }
            let cols: Vec<usize> = (start..end).collect();
            a.select_cols(&cols)
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Var<'g>, NumericsError> {
        let rows = rows.to_vec();
        let op = Op::SelectRows {
            x: self.id,
            rows: rows.clone(),
        };
        self.unary(op, |a| {
            if rows.is_empty() || rows.iter().any(|&r| r >= a.rows()) {
                return Err(NumericsError::Shape(format!(
                    "select_rows out of range for {:?}",
                    a.shape()
                )));
            }
            let cols = a.cols();
            let mut data = Vec::with_capacity(rows.len() * cols);
            for &r in &rows {
                data.extend_from_slice(a.row(r));
            }
            Tensor::new(&[rows.len(), cols], data)
        })
    }

    /// Mean negative log-likelihood of `items` under row-wise softmax of `self`.
    pub fn masked_nll(&self, items: &[NllItem]) -> Result<Var<'g>, NumericsError> {
        if items.is_empty() {
            return Err(NumericsError::EmptyMask);
        }
        let items = items.to_vec();
        let op = Op::MaskedNll {
            logits: self.id,
            items: items.clone(),
        };
        self.unary(op, |l| {
            let mut total = 0.0;
            for it in &items {
                if it.row >= l.rows() || it.valid > l.cols() || it.target >= it.valid {
                    return Err(NumericsError::Shape(format!(
                        "nll item {it:?} out of range for {:?}",
                        l.shape()
                    )));
                }
                let row = &l.row(it.row)[..it.valid];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[it.target];
            }
            Ok(Tensor::scalar(total / items.len() as f64))
        })
    }
}

/// Concatenates `[R, C_i]` nodes along columns.
pub fn concat_cols<'g>(parts: &[Var<'g>]) -> Result<Var<'g>, NumericsError> {
    let first = parts
        .first()
        .ok_or_else(|| NumericsError::Shape("concat_cols: no inputs".into()))?;
    let graph = first.graph;
    let value = {
        let inner = graph.inner.borrow();
        let rows = inner.nodes[first.id].value.rows();
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &inner.nodes[p.id].value).collect();
        if tensors.iter().any(|t| t.rows() != rows || t.shape().len() != 2) {
            return Err(NumericsError::Shape("concat_cols: row counts differ".into()));
        }
        let total: usize = tensors.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for t in &tensors {
                data.extend_from_slice(t.row(r));
            }
        }
        Tensor::new(&[rows, total], data)?
    };
    let needs = parts.iter().any(|p| p.needs());
    Ok(graph.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), needs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(entries: &[(&str, Tensor)]) -> ParamSet {
        let mut ps = ParamSet::new();
        for (n, t) in entries {
            ps.insert(n, t.clone()).unwrap();
        }
        ps
    }

    #[test]
    fn sum_gives_ones() {
        let ps = params(&[("p", Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap())]);
        let g = Graph::new();
        let p = g.param(&ps, "p").unwrap();
        let loss = p.sum().unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("p").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn half_sum_of_squares() {
        let ps = params(&[("p", Tensor::new(&[2], vec![1.0, 2.0]).unwrap())]);
        let g = Graph::new();
        let p = g.param(&ps, "p").unwrap();
        let loss = p.mul(p).unwrap().sum().unwrap().scale(0.5).unwrap();
        assert_eq!(loss.item(), 2.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("p").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let ps = params(&[("p", Tensor::zeros(&[2]))]);
        let g = Graph::new();
        let p = g.param(&ps, "p").unwrap();
        assert!(matches!(g.backward(p), Err(NumericsError::NotScalar(_))));
    }

    #[test]
    fn stop_gradient_blocks() {
        let ps = params(&[("p", Tensor::new(&[2], vec![3.0, 4.0]).unwrap())]);
        let g = Graph::new();
        let p = g.param(&ps, "p").unwrap();
        let loss = p.stop_gradient().mul(p).unwrap().sum().unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("p").unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn masked_nll_uniform_logits() {
        let g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[3, 7]));
        let items = [NllItem {
            row: 1,
            target: 2,
            valid: 7,
        }];
        let loss = logits.masked_nll(&items).unwrap();
        assert!((loss.item() - 7f64.ln()).abs() < 1e-12);
        assert!(matches!(logits.masked_nll(&[]), Err(NumericsError::EmptyMask)));
    }
}
