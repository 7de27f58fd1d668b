//! Dense f64 tensors on a define-by-run gradient tape.
//!
//! The tape is an arena of nodes in topological order: every operation's
//! inputs precede it, and one backward pass visits each node exactly once in
//! reverse. A fresh tape is built per forward pass, which keeps iterative
//! attacks (re-differentiating every step) simple and correct.
//!
//! Elementwise binary ops broadcast over leading axes only: the smaller
//! operand's shape must be a suffix of the larger's (e.g. bias `[C]` against
//! activations `[R, C]`).

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// A dense tensor value. Leaves created with `requires_grad` receive a `grad`
/// buffer of identical length after `backward`.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { lhs: usize, rhs: usize },
    Sub { lhs: usize, rhs: usize },
    Mul { lhs: usize, rhs: usize },
    Scale { input: usize, factor: f64 },
    ClampMin { input: usize, floor: f64 },
    MatMul { lhs: usize, rhs: usize, m: usize, k: usize, n: usize },
    Relu { input: usize },
    Log { input: usize },
    Exp { input: usize },
    Sum { input: usize },
    Mean { input: usize },
    MaxAxis { input: usize, argmax: Vec<usize> },
    Softmax { input: usize },
    Concat { inputs: Vec<usize>, widths: Vec<usize> },
    Reshape { input: usize },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Define-by-run gradient tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// Row-count threshold above which matmul parallelizes over output rows.
// Each row is computed independently, so the result is identical at any
// thread count.
const PAR_ROWS: usize = 256;

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let body = |i: usize, row: &mut [f64]| {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    };
    if m >= PAR_ROWS {
        c.par_chunks_mut(n).enumerate().for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in c.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
    c
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// Broadcast relationship for elementwise binary ops.
enum Cast {
    Same,
    /// rhs tiles over the lhs leading axes
    RhsSuffix,
    /// lhs tiles over the rhs leading axes
    LhsSuffix,
}

fn broadcast_kind(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Cast> {
    if lhs == rhs {
        return Ok(Cast::Same);
    }
    if rhs.len() < lhs.len() && lhs.ends_with(rhs) {
        return Ok(Cast::RhsSuffix);
    }
    if lhs.len() < rhs.len() && rhs.ends_with(lhs) {
        return Ok(Cast::LhsSuffix);
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

/// Sum `grad` (shaped `full`) down to the suffix shape of length `suffix_numel`.
fn reduce_to_suffix(grad: &[f64], suffix_numel: usize) -> Vec<f64> {
    let mut out = vec![0.0; suffix_numel];
    for (i, g) in grad.iter().enumerate() {
        out[i % suffix_numel] += g;
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].tensor.data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].tensor.requires_grad
    }

    /// Gradient buffer of `id`, populated by the most recent `backward`.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad.as_deref()
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].tensor.numel(), 1);
        self.nodes[id.0].tensor.data[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> TensorId {
        // numerical-explosion tripwire on computed values; leaves may carry
        // raw external data, which the consuming ops validate themselves
        debug_assert!(
            matches!(op, Op::Leaf) || data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let id = self.nodes.len();
        self.nodes.push(Node {
            tensor: Tensor {
                shape,
                data,
                requires_grad,
                grad: None,
            },
            op,
        });
        TensorId(id)
    }

    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let (la, lb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        let cast = broadcast_kind(name, &la.shape, &lb.shape)?;
        let rg = la.requires_grad || lb.requires_grad;
        let (shape, data) = match cast {
            Cast::Same => (
                la.shape.clone(),
                la.data.iter().zip(&lb.data).map(|(x, y)| f(*x, *y)).collect(),
            ),
            Cast::RhsSuffix => {
                let s = lb.data.len();
                (
                    la.shape.clone(),
                    la.data
                        .iter()
                        .enumerate()
                        .map(|(i, x)| f(*x, lb.data[i % s]))
                        .collect(),
                )
            }
            Cast::LhsSuffix => {
                let s = la.data.len();
                (
                    lb.shape.clone(),
                    lb.data
                        .iter()
                        .enumerate()
                        .map(|(i, y)| f(la.data[i % s], *y))
                        .collect(),
                )
            }
        };
        Ok(self.push(shape, data, rg, op))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { lhs: a.0, rhs: b.0 })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { lhs: a.0, rhs: b.0 })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { lhs: a.0, rhs: b.0 })
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        let data = t.data.iter().map(|x| x * factor).collect();
        let (shape, rg) = (t.shape.clone(), t.requires_grad);
        Ok(self.push(shape, data, rg, Op::Scale { input: a.0, factor }))
    }

    /// Elementwise `max(x, floor)`. Gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: TensorId, floor: f64) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        let data = t.data.iter().map(|x| x.max(floor)).collect();
        let (shape, rg) = (t.shape.clone(), t.requires_grad);
        Ok(self.push(shape, data, rg, Op::ClampMin { input: a.0, floor }))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (la, lb) = (&self.nodes[a.0].tensor, &self.nodes[b.0].tensor);
        if la.shape.len() != 2 || lb.shape.len() != 2 || la.shape[1] != lb.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: la.shape.clone(),
                rhs: lb.shape.clone(),
            });
        }
        let (m, k, n) = (la.shape[0], la.shape[1], lb.shape[1]);
        let data = matmul_raw(&la.data, &lb.data, m, k, n);
        let rg = la.requires_grad || lb.requires_grad;
        Ok(self.push(
            vec![m, n],
            data,
            rg,
            Op::MatMul { lhs: a.0, rhs: b.0, m, k, n },
        ))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        let data = t.data.iter().map(|x| x.max(0.0)).collect();
        let (shape, rg) = (t.shape.clone(), t.requires_grad);
        Ok(self.push(shape, data, rg, Op::Relu { input: a.0 }))
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        if t.data.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::NonFinite("log"));
        }
        let data = t.data.iter().map(|x| x.ln()).collect();
        let (shape, rg) = (t.shape.clone(), t.requires_grad);
        Ok(self.push(shape, data, rg, Op::Log { input: a.0 }))
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        let data = t.data.iter().map(|x| x.exp()).collect();
        let (shape, rg) = (t.shape.clone(), t.requires_grad);
        Ok(self.push(shape, data, rg, Op::Exp { input: a.0 }))
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        let s: f64 = t.data.iter().sum();
        let rg = t.requires_grad;
        Ok(self.push(vec![1], vec![s], rg, Op::Sum { input: a.0 }))
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        let s: f64 = t.data.iter().sum::<f64>() / t.data.len() as f64;
        let rg = t.requires_grad;
        Ok(self.push(vec![1], vec![s], rg, Op::Mean { input: a.0 }))
    }

    /// Maximum over `axis`, retaining the argmax for the backward pass.
    /// Ties route to the lowest index along the axis.
    pub fn max_over_axis(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        if axis >= t.shape.len() {
            return Err(Error::ShapeMismatch {
                op: "max_over_axis",
                lhs: t.shape.clone(),
                rhs: vec![axis],
            });
        }
        let axis_len = t.shape[axis];
        if axis_len == 0 {
            return Err(Error::ShapeMismatch {
                op: "max_over_axis",
                lhs: t.shape.clone(),
                rhs: vec![axis],
            });
        }
        let outer: usize = t.shape[..axis].iter().product();
        let inner: usize = t.shape[axis + 1..].iter().product();
        let mut out_shape = t.shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut data = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for j in 0..axis_len {
                    let idx = (o * axis_len + j) * inner + i;
                    let v = t.data[idx];
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                data[o * inner + i] = best;
                argmax[o * inner + i] = best_idx;
            }
        }
        let rg = t.requires_grad;
        Ok(self.push(out_shape, data, rg, Op::MaxAxis { input: a.0, argmax }))
    }

    /// Row softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        if t.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("softmax"));
        }
        let cols = *t.shape.last().ok_or(Error::ShapeMismatch {
            op: "softmax",
            lhs: t.shape.clone(),
            rhs: vec![],
        })?;
        let mut data = vec![0.0; t.data.len()];
        for (row_out, row_in) in data.chunks_mut(cols).zip(t.data.chunks(cols)) {
            let m = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, x) in row_out.iter_mut().zip(row_in) {
                *o = (x - m).exp();
                z += *o;
            }
            for o in row_out.iter_mut() {
                *o /= z;
            }
        }
        let (shape, rg) = (t.shape.clone(), t.requires_grad);
        Ok(self.push(shape, data, rg, Op::Softmax { input: a.0 }))
    }

    /// Concatenate along the last axis. All inputs must share leading dims.
    pub fn concat_channels(&mut self, inputs: &[TensorId]) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: vec![],
                rhs: vec![],
            });
        }
        let lead = self.nodes[inputs[0].0].tensor.shape[..self.nodes[inputs[0].0].tensor.shape.len() - 1].to_vec();
        let mut widths = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let s = &self.nodes[id.0].tensor.shape;
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: self.nodes[inputs[0].0].tensor.shape.clone(),
                    rhs: s.clone(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let total_w: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = vec![0.0; rows * total_w];
        let mut rg = false;
        let mut col = 0;
        for (&id, &w) in inputs.iter().zip(&widths) {
            let t = &self.nodes[id.0].tensor;
            rg |= t.requires_grad;
            for r in 0..rows {
                data[r * total_w + col..r * total_w + col + w]
                    .copy_from_slice(&t.data[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let mut shape = lead;
        shape.push(total_w);
        Ok(self.push(
            shape,
            data,
            rg,
            Op::Concat {
                inputs: inputs.iter().map(|i| i.0).collect(),
                widths,
            },
        ))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let t = &self.nodes[a.0].tensor;
        if shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: t.shape.clone(),
                rhs: shape,
            });
        }
        let (data, rg) = (t.data.clone(), t.requires_grad);
        Ok(self.push(shape, data, rg, Op::Reshape { input: a.0 }))
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every
    /// `requires_grad` node reachable from the loss; gradients accumulate
    /// additively across fan-out.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let lt = &self.nodes[loss.0].tensor;
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape.clone()));
        }
        if !lt.requires_grad {
            return Err(Error::DetachedBackward);
        }
        for node in &mut self.nodes {
            node.tensor.grad = if node.tensor.requires_grad {
                Some(vec![0.0; node.tensor.data.len()])
            } else {
                None
            };
        }
        self.nodes[loss.0].tensor.grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].tensor.grad.clone() else {
                continue;
            };
            match self.nodes[i].op.clone() {
                Op::Leaf => {}
                Op::Add { lhs, rhs } => {
                    self.accumulate_broadcast(lhs, &grad, 1.0);
                    self.accumulate_broadcast(rhs, &grad, 1.0);
                }
                Op::Sub { lhs, rhs } => {
                    self.accumulate_broadcast(lhs, &grad, 1.0);
                    self.accumulate_broadcast(rhs, &grad, -1.0);
                }
                Op::Mul { lhs, rhs } => {
                    let (ld, rd) = (
                        self.nodes[lhs].tensor.data.clone(),
                        self.nodes[rhs].tensor.data.clone(),
                    );
                    let (ls, rs) = (ld.len(), rd.len());
                    if self.nodes[lhs].tensor.requires_grad {
                        let g: Vec<f64> = grad
                            .iter()
                            .enumerate()
                            .map(|(j, g)| g * rd[j % rs])
                            .collect();
                        self.accumulate_broadcast(lhs, &g, 1.0);
                    }
                    if self.nodes[rhs].tensor.requires_grad {
                        let g: Vec<f64> = grad
                            .iter()
                            .enumerate()
                            .map(|(j, g)| g * ld[j % ls])
                            .collect();
                        self.accumulate_broadcast(rhs, &g, 1.0);
                    }
                }
                Op::Scale { input, factor } => {
                    let g: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                    self.accumulate(input, &g);
                }
                Op::ClampMin { input, floor } => {
                    let data = self.nodes[input].tensor.data.clone();
                    let g: Vec<f64> = grad
                        .iter()
                        .zip(&data)
                        .map(|(g, x)| if *x > floor { *g } else { 0.0 })
                        .collect();
                    self.accumulate(input, &g);
                }
                Op::MatMul { lhs, rhs, m, k, n } => {
                    if self.nodes[lhs].tensor.requires_grad {
                        let bt = transpose(&self.nodes[rhs].tensor.data, k, n);
                        let da = matmul_raw(&grad, &bt, m, n, k);
                        self.accumulate(lhs, &da);
                    }
                    if self.nodes[rhs].tensor.requires_grad {
                        let at = transpose(&self.nodes[lhs].tensor.data, m, k);
                        let db = matmul_raw(&at, &grad, k, m, n);
                        self.accumulate(rhs, &db);
                    }
                }
                Op::Relu { input } => {
                    let data = self.nodes[input].tensor.data.clone();
                    let g: Vec<f64> = grad
                        .iter()
                        .zip(&data)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(input, &g);
                }
                Op::Log { input } => {
                    let data = self.nodes[input].tensor.data.clone();
                    let g: Vec<f64> = grad.iter().zip(&data).map(|(g, x)| g / x).collect();
                    self.accumulate(input, &g);
                }
                Op::Exp { input } => {
                    let out = self.nodes[i].tensor.data.clone();
                    let g: Vec<f64> = grad.iter().zip(&out).map(|(g, y)| g * y).collect();
                    self.accumulate(input, &g);
                }
                Op::Sum { input } => {
                    let n = self.nodes[input].tensor.data.len();
                    let g = vec![grad[0]; n];
                    self.accumulate(input, &g);
                }
                Op::Mean { input } => {
                    let n = self.nodes[input].tensor.data.len();
                    let g = vec![grad[0] / n as f64; n];
                    self.accumulate(input, &g);
                }
                Op::MaxAxis { input, argmax } => {
                    let mut g = vec![0.0; self.nodes[input].tensor.data.len()];
                    for (out_idx, &src) in argmax.iter().enumerate() {
                        g[src] += grad[out_idx];
                    }
                    self.accumulate(input, &g);
                }
                Op::Softmax { input } => {
                    let y = self.nodes[i].tensor.data.clone();
                    let cols = *self.nodes[i].tensor.shape.last().unwrap();
                    let mut g = vec![0.0; y.len()];
                    for r in 0..y.len() / cols {
                        let ys = &y[r * cols..(r + 1) * cols];
                        let gs = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                        for c in 0..cols {
                            g[r * cols + c] = ys[c] * (gs[c] - dot);
                        }
                    }
                    self.accumulate(input, &g);
                }
                Op::Concat { inputs, widths } => {
                    let total_w: usize = widths.iter().sum();
                    let rows = grad.len() / total_w;
                    let mut col = 0;
                    for (&input, &w) in inputs.iter().zip(&widths) {
                        if self.nodes[input].tensor.requires_grad {
                            let mut g = vec![0.0; rows * w];
                            for r in 0..rows {
                                g[r * w..(r + 1) * w].copy_from_slice(
                                    &grad[r * total_w + col..r * total_w + col + w],
                                );
                            }
                            self.accumulate(input, &g);
                        }
                        col += w;
                    }
                }
                Op::Reshape { input } => {
                    self.accumulate(input, &grad);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, idx: usize, g: &[f64]) {
        if let Some(grad) = &mut self.nodes[idx].tensor.grad {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    /// Accumulate `sign * g` into `idx`, summing over leading axes when the
    /// target is a broadcast suffix of the gradient.
    fn accumulate_broadcast(&mut self, idx: usize, g: &[f64], sign: f64) {
        let Some(grad) = &mut self.nodes[idx].tensor.grad else {
            return;
        };
        if grad.len() == g.len() {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += sign * b;
            }
        } else {
            let reduced = reduce_to_suffix(g, grad.len());
            for (a, b) in grad.iter_mut().zip(&reduced) {
                *a += sign * b;
            }
        }
    }
}
