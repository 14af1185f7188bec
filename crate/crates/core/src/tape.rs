//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation in execution order.
//! `backward` walks the records in reverse exactly once and accumulates
//! gradients additively, so fan-out works without special casing. Each
//! training step builds a fresh tape; there is no stale gradient state to
//! zero between steps.

use crate::tensor::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Backward rule for an operation the tape core does not know about.
///
/// `grads` receives the input values, the forward output and the output
/// gradient, and returns one optional gradient per input (None for inputs
/// that do not need one).
pub trait CustomOp: std::fmt::Debug {
    fn grads(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        out_grad: &[f64],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    /// [T, d] + [d], the bias pattern.
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<Var>),
    MseLoss(Var, Var),
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    /// Gradient must flow through this node.
    needs_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximation GELU, applied elementwise.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn matmul_vals(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for t in 0..k {
            let av = a[i * k + t];
            if av != 0.0 {
                let brow = &b[t * n..(t + 1) * n];
                let crow = &mut c[i * n..(i + 1) * n];
                for j in 0..n {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
    c
}

fn softmax_rows(x: &[f64], outer: usize, axis_len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * axis_len + a) * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for a in 0..axis_len {
                mx = mx.max(x[idx(a)]);
            }
            let mut sum = 0.0;
            for a in 0..axis_len {
                let e = (x[idx(a)] - mx).exp();
                y[idx(a)] = e;
                sum += e;
            }
            for a in 0..axis_len {
                y[idx(a)] /= sum;
            }
        }
    }
    y
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of a node, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a gradient target.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let c = matmul_vals(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], c)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.value(a).same_shape(self.value(b), "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::Add(a, b)))
    }

    /// `[T, d] + [d]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if ta.shape().len() != 2 || tb.shape().len() != 1 || ta.cols() != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let d = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data()[i % d])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(value, needs, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        let needs = self.needs(a);
        self.push(value, needs, Op::Scale(a, factor))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().copied().map(gelu_scalar).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        let needs = self.needs(a);
        self.push(value, needs, Op::Gelu(a))
    }

    /// Numerically stable softmax along `axis` (max-subtraction form).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TensorError::BadAxis { axis, shape });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let y = softmax_rows(ta.data(), outer, axis_len, inner);
        let value = Tensor::new(shape, y)?;
        let needs = self.needs(a);
        Ok(self.push(value, needs, Op::Softmax(a, axis)))
    }

    /// Per-row layer normalization over the last axis of a 2-D tensor,
    /// followed by the affine map `gamma * xhat + beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        if tx.shape().len() != 2
            || tg.shape() != [tx.cols()]
            || tb.shape() != [tx.cols()]
        {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: tx.shape().to_vec(),
                right: tg.shape().to_vec(),
            });
        }
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let (t, d) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                out[r * d + c] = (row[c] - mean) * inv * tg.data()[c] + tb.data()[c];
            }
        }
        let value = Tensor::new(vec![t, d], out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, needs, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                left: ta.shape().to_vec(),
                right: vec![],
            });
        }
        let (m, n) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ta.data()[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let needs = self.needs(a);
        Ok(self.push(value, needs, Op::Transpose(a)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || start + len > tx.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: tx.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let (m, n) = (tx.rows(), tx.cols());
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&tx.data()[i * n + start..i * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::SliceCols { x, start, len }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let tp = self.value(p);
                if tp.rows() != m {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_cols",
                        left: vec![m],
                        right: tp.shape().to_vec(),
                    });
                }
                let n = tp.cols();
                out.extend_from_slice(&tp.data()[i * n..(i + 1) * n]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        let needs = parts.iter().any(|v| self.needs(*v));
        Ok(self.push(value, needs, Op::ConcatCols(parts.to_vec())))
    }

    /// Mean over all elements of `(a - b)^2`.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.value(a).same_shape(self.value(b), "mse_loss")?;
        let n = self.value(a).numel() as f64;
        let sum: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let value = Tensor::scalar(sum / n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, Op::MseLoss(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), needs, Op::Sum(a))
    }

    /// Register an externally computed op with its own backward rule.
    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let needs = inputs.iter().any(|v| self.needs(*v));
        self.push(value, needs, Op::Custom { inputs, op })
    }

    /// Reverse pass from a scalar loss with upstream gradient 1.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.backward_seeded(loss, 1.0)
    }

    /// Reverse pass with an explicit upstream gradient on the scalar loss.
    pub fn backward_seeded(&mut self, loss: Var, seed: f64) -> Result<(), TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.value(loss).shape().to_vec(),
            });
        }
        self.accumulate(loss, &[seed]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            self.propagate(i)?;
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: &[f64]) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let buf = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (b, x) in buf.iter_mut().zip(g) {
            *b += x;
        }
    }

    fn propagate(&mut self, i: usize) -> Result<(), TensorError> {
        // Inputs always precede node i, so grads computed here go to j < i.
        let og = self.nodes[i].grad.as_ref().unwrap().clone();
        // Op is read via raw indexing to keep the borrow checker out of the
        // per-op math; every branch only reads values and writes grads.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let ta = self.value(a).clone();
                let tb = self.value(b).clone();
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(a) {
                    // dA = dC . B^T
                    let mut da = vec![0.0; m * k];
                    for i2 in 0..m {
                        for t in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += og[i2 * n + j] * tb.data()[t * n + j];
                            }
                            da[i2 * k + t] = s;
                        }
                    }
                    self.accumulate(a, &da);
                }
                if self.needs(b) {
                    // dB = A^T . dC
                    let mut db = vec![0.0; k * n];
                    for i2 in 0..m {
                        for t in 0..k {
                            let av = ta.data()[i2 * k + t];
                            if av != 0.0 {
                                for j in 0..n {
                                    db[t * n + j] += av * og[i2 * n + j];
                                }
                            }
                        }
                    }
                    self.accumulate(b, &db);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, &og);
                self.accumulate(b, &og);
            }
            Op::AddRow(a, bias) => {
                let (a, bias) = (*a, *bias);
                let d = self.value(bias).numel();
                self.accumulate(a, &og);
                if self.needs(bias) {
                    let mut db = vec![0.0; d];
                    for (i2, g) in og.iter().enumerate() {
                        db[i2 % d] += g;
                    }
                    self.accumulate(bias, &db);
                }
            }
            Op::Scale(a, f) => {
                let (a, f) = (*a, *f);
                let da: Vec<f64> = og.iter().map(|g| g * f).collect();
                self.accumulate(a, &da);
            }
            Op::Gelu(a) => {
                let a = *a;
                let da: Vec<f64> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(&og)
                    .map(|(x, g)| g * gelu_deriv(*x))
                    .collect();
                self.accumulate(a, &da);
            }
            Op::Softmax(a, axis) => {
                let (a, axis) = (*a, *axis);
                let y = self.nodes[i].value.clone();
                let shape = y.shape().to_vec();
                let outer: usize = shape[..axis].iter().product();
                let axis_len = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let mut dx = vec![0.0; y.numel()];
                for o in 0..outer {
                    for i2 in 0..inner {
                        let idx = |a2: usize| (o * axis_len + a2) * inner + i2;
                        let mut dot = 0.0;
                        for a2 in 0..axis_len {
                            dot += og[idx(a2)] * y.data()[idx(a2)];
                        }
                        for a2 in 0..axis_len {
                            dx[idx(a2)] = y.data()[idx(a2)] * (og[idx(a2)] - dot);
                        }
                    }
                }
                self.accumulate(a, &dx);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (x, gamma, beta, eps) = (*x, *gamma, *beta, *eps);
                let tx = self.value(x).clone();
                let tg = self.value(gamma).clone();
                let (t, d) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; t * d];
                let mut dg = vec![0.0; d];
                let mut db = vec![0.0; d];
                for r in 0..t {
                    let row = &tx.data()[r * d..(r + 1) * d];
                    let grow = &og[r * d..(r + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    // xhat_c and g_c = dy_c * gamma_c
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for c in 0..d {
                        let xhat = (row[c] - mean) * inv;
                        let g = grow[c] * tg.data()[c];
                        mean_g += g;
                        mean_gx += g * xhat;
                        dg[c] += grow[c] * xhat;
                        db[c] += grow[c];
                    }
                    mean_g /= d as f64;
                    mean_gx /= d as f64;
                    for c in 0..d {
                        let xhat = (row[c] - mean) * inv;
                        let g = grow[c] * tg.data()[c];
                        dx[r * d + c] = inv * (g - mean_g - xhat * mean_gx);
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(gamma, &dg);
                self.accumulate(beta, &db);
            }
            Op::Transpose(a) => {
                let a = *a;
                let tv = &self.nodes[i].value;
                let (n, m) = (tv.rows(), tv.cols()); // transposed dims
                let mut da = vec![0.0; n * m];
                for r in 0..n {
                    for c in 0..m {
                        da[c * n + r] = og[r * m + c];
                    }
                }
                self.accumulate(a, &da);
            }
            Op::SliceCols { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                let tx = self.value(x);
                let (m, n) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..len {
                        dx[r * n + start + c] = og[r * len + c];
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let m = self.value(parts[0]).rows();
                let total: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
                let mut offset = 0;
                for p in parts {
                    let n = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = vec![0.0; m * n];
                        for r in 0..m {
                            dp[r * n..(r + 1) * n]
                                .copy_from_slice(&og[r * total + offset..r * total + offset + n]);
                        }
                        self.accumulate(p, &dp);
                    }
                    offset += n;
                }
            }
            Op::MseLoss(a, b) => {
                let (a, b) = (*a, *b);
                let n = self.value(a).numel() as f64;
                let g = og[0];
                let diff: Vec<f64> = self
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.value(b).data())
                    .map(|(x, y)| 2.0 * (x - y) / n * g)
                    .collect();
                if self.needs(a) {
                    self.accumulate(a, &diff);
                }
                if self.needs(b) {
                    let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
                    self.accumulate(b, &neg);
                }
            }
            Op::Sum(a) => {
                let a = *a;
                let n = self.value(a).numel();
                let da = vec![og[0]; n];
                self.accumulate(a, &da);
            }
            Op::Custom { inputs, op } => {
                let inputs = inputs.clone();
                let in_vals: Vec<Tensor> =
                    inputs.iter().map(|v| self.value(*v).clone()).collect();
                let refs: Vec<&Tensor> = in_vals.iter().collect();
                let grads = op.grads(&refs, &self.nodes[i].value, &og);
                for (v, g) in inputs.iter().zip(grads) {
                    if let Some(g) = g {
                        self.accumulate(*v, &g);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Max relative error between the analytic gradient of `f` at `xs` and a
/// central finite difference with step `h`.
///
/// `f` must deterministically build a scalar loss on the tape from leaves
/// bound in the order of `xs`. Every element of every input is perturbed,
/// so keep inputs small.
pub fn finite_diff_check_multi<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    assert!(h > 0.0);
    let eval = |inputs: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).scalar_value())
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| {
            tape.grad(*v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tape.value(*v).numel()])
        })
        .collect();

    let mut max_rel = 0.0f64;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (pi, x) in xs.iter().enumerate() {
        for ei in 0..x.numel() {
            let orig = x.data()[ei];
            probe[pi].data_mut()[ei] = orig + h;
            let fp = eval(&probe)?;
            probe[pi].data_mut()[ei] = orig - h;
            let fm = eval(&probe)?;
            probe[pi].data_mut()[ei] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

/// Single-input form of [`finite_diff_check_multi`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, TensorError>,
{
    finite_diff_check_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}
