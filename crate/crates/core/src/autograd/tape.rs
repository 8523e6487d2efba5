//! Tape-based reverse-mode differentiation.
//!
//! Ops append nodes to a [`Tape`]; a node's parents always have smaller
//! indices, so walking the node list backwards is a reverse topological
//! order. Nodes that do not depend on any tracked leaf record no backward
//! rule.

use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Lower clamp for probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    SegmentSoftmax {
        input: Var,
        segments: Arc<Vec<u32>>,
        count: usize,
    },
    SumAll(Var),
    SegmentSum {
        input: Var,
        segments: Arc<Vec<u32>>,
    },
    GatherRows {
        input: Var,
        index: Arc<Vec<u32>>,
    },
    ScaleRows {
        input: Var,
        factors: Arc<Vec<f64>>,
    },
    HeadDot {
        input: Var,
        weights: Var,
        heads: usize,
    },
    EdgeAggregate {
        values: Var,
        gate: Var,
        src: Arc<Vec<u32>>,
        dst: Arc<Vec<u32>>,
        heads: usize,
    },
    HeadMean {
        input: Var,
        heads: usize,
    },
    Bce {
        input: Var,
        target: Arc<Tensor>,
        reduction: Reduction,
    },
    Mse {
        input: Var,
        target: Arc<Tensor>,
        reduction: Reduction,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a tracked leaf; `None` for untracked values.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.dims(),
        right: b.dims(),
    }
}

/// `c = alpha * a @ b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover the strided index
    // ranges [0, m) x [0, k) for a, [0, k) x [0, n) for b and a dense
    // row-major m x n block for c.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_rs as isize,
            a_cs as isize,
            b.as_ptr(),
            b_rs as isize,
            b_cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y += alpha * x`.
#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::matrix(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
        .expect("shape preserved")
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: if tracked { op } else { Op::Leaf },
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records an input. Gradients are collected only for `requires_grad` leaves.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies a value into a new untracked leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(mismatch("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), k, 1, bv.data(), n, 1, &mut out, 0.0);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), tracked))
    }

    /// Elementwise sum of equal shapes, or `a + b` with `b` a `[1, cols]` row
    /// broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        if av.same_shape(bv) {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let t = Tensor::matrix(av.rows(), av.cols(), data)?;
            return Ok(self.push(t, Op::Add(a, b), tracked));
        }
        if bv.rows() == 1 && bv.cols() == av.cols() {
            let cols = av.cols();
            let data = av
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bv.data()[i % cols])
                .collect();
            let t = Tensor::matrix(av.rows(), cols, data)?;
            return Ok(self.push(t, Op::AddRow(a, b), tracked));
        }
        Err(mismatch("add", av, bv))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch("sub", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::matrix(av.rows(), av.cols(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::matrix(av.rows(), av.cols(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = map(self.value(a), |x| x * factor);
        let tracked = self.tracked(a);
        self.push(t, Op::Scale(a, factor), tracked)
    }

    /// Same row-major data viewed as `[rows, cols]`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: av.dims(),
                right: vec![rows, cols],
            });
        }
        let t = Tensor::matrix(rows, cols, av.data().to_vec())?;
        let tracked = self.tracked(a);
        Ok(self.push(t, Op::Reshape(a), tracked))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let t = map(self.value(a), |x| x + offset);
        let tracked = self.tracked(a);
        self.push(t, Op::AddScalar(a), tracked)
    }

    /// Concatenates along columns; all inputs must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat", self.value(*first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::matrix(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), tracked))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(self.value(a), sigmoid);
        let tracked = self.tracked(a);
        self.push(t, Op::Sigmoid(a), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |x| x.max(0.0));
        let tracked = self.tracked(a);
        self.push(t, Op::Relu(a), tracked)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = map(self.value(a), |x| if x > 0.0 { x } else { slope * x });
        let tracked = self.tracked(a);
        self.push(t, Op::LeakyRelu(a, slope), tracked)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let t = map(self.value(a), softplus);
        let tracked = self.tracked(a);
        self.push(t, Op::Softplus(a), tracked)
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, a: Var, segments: Arc<Vec<u32>>, count: usize) -> Result<Var> {
        let av = self.value(a);
        if segments.len() != av.rows() {
            return Err(Error::ShapeMismatch {
                op: "segment_softmax",
                left: av.dims(),
                right: vec![segments.len()],
            });
        }
        if let Some(&s) = segments.iter().find(|&&s| s as usize >= count) {
            return Err(Error::invalid(format!("segment id {s} >= segment count {count}")));
        }
        let cols = av.cols();
        let mut maxes = vec![f64::NEG_INFINITY; count * cols];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let slot = &mut maxes[s as usize * cols + c];
                *slot = slot.max(av.data()[r * cols + c]);
            }
        }
        let mut out = vec![0.0; av.len()];
        let mut sums = vec![0.0; count * cols];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let e = (av.data()[r * cols + c] - maxes[s as usize * cols + c]).exp();
                out[r * cols + c] = e;
                sums[s as usize * cols + c] += e;
            }
        }
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                out[r * cols + c] /= sums[s as usize * cols + c];
            }
        }
        let t = Tensor::matrix(av.rows(), cols, out)?;
        let tracked = self.tracked(a);
        Ok(self.push(
            t,
            Op::SegmentSoftmax {
                input: a,
                segments,
                count,
            },
            tracked,
        ))
    }

    /// Sum of all entries as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums rows into `count` buckets: `out[segments[r]] += a[r]`.
    pub fn segment_sum(&mut self, a: Var, segments: Arc<Vec<u32>>, count: usize) -> Result<Var> {
        let av = self.value(a);
        if segments.len() != av.rows() {
            return Err(Error::ShapeMismatch {
                op: "segment_sum",
                left: av.dims(),
                right: vec![segments.len()],
            });
        }
        let cols = av.cols();
        let mut out = vec![0.0; count * cols];
        for (r, &s) in segments.iter().enumerate() {
            if s as usize >= count {
                return Err(Error::invalid(format!("segment id {s} >= segment count {count}")));
            }
            let dst = &mut out[s as usize * cols..(s as usize + 1) * cols];
            for (d, x) in dst.iter_mut().zip(av.row_slice(r)) {
                *d += x;
            }
        }
        let t = Tensor::matrix(count, cols, out)?;
        let tracked = self.tracked(a);
        Ok(self.push(t, Op::SegmentSum { input: a, segments }, tracked))
    }

    /// Selects rows: `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<u32>>) -> Result<Var> {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            if i as usize >= av.rows() {
                return Err(Error::invalid(format!(
                    "gather index {i} out of range for {} rows",
                    av.rows()
                )));
            }
            data.extend_from_slice(av.row_slice(i as usize));
        }
        let t = Tensor::matrix(index.len(), cols, data)?;
        let tracked = self.tracked(a);
        Ok(self.push(t, Op::GatherRows { input: a, index }, tracked))
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn scale_rows(&mut self, a: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        let av = self.value(a);
        if factors.len() != av.rows() {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                left: av.dims(),
                right: vec![factors.len()],
            });
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * factors[i / cols])
            .collect();
        let t = Tensor::matrix(av.rows(), cols, data)?;
        let tracked = self.tracked(a);
        Ok(self.push(t, Op::ScaleRows { input: a, factors }, tracked))
    }

    /// Per-head dot products: `input` is `[M, heads*D]`, `weights` is
    /// `[1, heads*D]`; output `[M, heads]`.
    pub fn head_dot(&mut self, input: Var, weights: Var, heads: usize) -> Result<Var> {
        let (xv, wv) = (self.value(input), self.value(weights));
        if wv.rows() != 1 || wv.cols() != xv.cols() || heads == 0 || xv.cols() % heads != 0 {
            return Err(mismatch("head_dot", xv, wv));
        }
        let d = xv.cols() / heads;
        let mut out = vec![0.0; xv.rows() * heads];
        for r in 0..xv.rows() {
            let row = xv.row_slice(r);
            for h in 0..heads {
                out[r * heads + h] = row[h * d..(h + 1) * d]
                    .iter()
                    .zip(&wv.data()[h * d..(h + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum();
            }
        }
        let t = Tensor::matrix(xv.rows(), heads, out)?;
        let tracked = self.tracked(input) || self.tracked(weights);
        Ok(self.push(
            t,
            Op::HeadDot {
                input,
                weights,
                heads,
            },
            tracked,
        ))
    }

    /// Gated message passing: `out[dst[e], h-block] += gate[e, h] * values[src[e], h-block]`.
    /// `values` is `[M, heads*D]`, `gate` is `[E, heads]`, output `[M, heads*D]`.
    pub fn edge_aggregate(
        &mut self,
        values: Var,
        gate: Var,
        src: Arc<Vec<u32>>,
        dst: Arc<Vec<u32>>,
        heads: usize,
    ) -> Result<Var> {
        let (pv, gv) = (self.value(values), self.value(gate));
        let edges = src.len();
        if dst.len() != edges || gv.rows() != edges || gv.cols() != heads || heads == 0 {
            return Err(mismatch("edge_aggregate", pv, gv));
        }
        if pv.cols() % heads != 0 {
            return Err(mismatch("edge_aggregate", pv, gv));
        }
        let m = pv.rows();
        let width = pv.cols();
        let d = width / heads;
        let mut out = vec![0.0; m * width];
        for e in 0..edges {
            let (s, t) = (src[e] as usize, dst[e] as usize);
            if s >= m || t >= m {
                return Err(Error::invalid(format!("edge {e} endpoint out of range for {m} rows")));
            }
            let from = pv.row_slice(s);
            let to = &mut out[t * width..(t + 1) * width];
            let gates = &gv.data()[e * heads..(e + 1) * heads];
            for ((to, from), &g) in to.chunks_exact_mut(d).zip(from.chunks_exact(d)).zip(gates) {
                axpy(g, from, to);
            }
        }
        let t = Tensor::matrix(m, width, out)?;
        let tracked = self.tracked(values) || self.tracked(gate);
        Ok(self.push(
            t,
            Op::EdgeAggregate {
                values,
                gate,
                src,
                dst,
                heads,
            },
            tracked,
        ))
    }

    /// Averages the `heads` column blocks of `[M, heads*D]` into `[M, D]`.
    pub fn head_mean(&mut self, a: Var, heads: usize) -> Result<Var> {
        let av = self.value(a);
        if heads == 0 || av.cols() % heads != 0 {
            return Err(Error::invalid(format!(
                "head_mean: {} columns do not split into {heads} heads",
                av.cols()
            )));
        }
        let d = av.cols() / heads;
        let mut out = vec![0.0; av.rows() * d];
        for r in 0..av.rows() {
            let row = av.row_slice(r);
            for h in 0..heads {
                for k in 0..d {
                    out[r * d + k] += row[h * d + k] / heads as f64;
                }
            }
        }
        let t = Tensor::matrix(av.rows(), d, out)?;
        let tracked = self.tracked(a);
        Ok(self.push(t, Op::HeadMean { input: a, heads }, tracked))
    }

    /// Binary cross-entropy `-[t ln p + (1-t) ln(1-p)]` with `p` clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce_loss(&mut self, p: Var, target: Arc<Tensor>, reduction: Reduction) -> Result<Var> {
        let pv = self.value(p);
        if !pv.same_shape(&target) {
            return Err(mismatch("bce_loss", pv, &target));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| {
                let x = x.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(t * x.ln() + (1.0 - t) * (1.0 - x).ln())
            })
            .sum();
        let value = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / pv.len() as f64,
        };
        let tracked = self.tracked(p);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Bce {
                input: p,
                target,
                reduction,
            },
            tracked,
        ))
    }

    /// Squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: Arc<Tensor>, reduction: Reduction) -> Result<Var> {
        let pv = self.value(pred);
        if !pv.same_shape(&target) {
            return Err(mismatch("mse_loss", pv, &target));
        }
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, t)| (x - t).powi(2))
            .sum();
        let value = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => total / pv.len() as f64,
        };
        let tracked = self.tracked(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Mse {
                input: pred,
                target,
                reduction,
            },
            tracked,
        ))
    }

    /// Back-propagates from a scalar `loss`. A tape supports one backward
    /// pass; record a fresh forward pass on a new tape to differentiate again.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Backward(
                "tape already consumed by a previous backward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).dims()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.tracked(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].tracked {
            return None;
        }
        let value = &self.nodes[v.0].value;
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(value.rows(), value.cols()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(da) = self.acc(grads, *a) {
                    // dA += dC @ B^T
                    gemm(m, n, k, gd, n, 1, bv.data(), 1, n, da, 1.0);
                }
                if let Some(db) = self.acc(grads, *b) {
                    // dB += A^T @ dC
                    gemm(k, m, n, av.data(), 1, k, gd, n, 1, db, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(d) = self.acc(grads, *v) {
                        d.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
                let cols = g.cols();
                if let Some(d) = self.acc(grads, *b) {
                    for (i, y) in gd.iter().enumerate() {
                        d[i % cols] += y;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
                if let Some(d) = self.acc(grads, *b) {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.acc(grads, *a) {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += gd[j] * bv[j];
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += gd[j] * av[j];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += f * y);
                }
            }
            Op::Reshape(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
            }
            Op::AddScalar(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += y);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if let Some(d) = self.acc(grads, *p) {
                        for r in 0..rows {
                            for k in 0..c {
                                d[r * c + k] += gd[r * total + offset + k];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(d) = self.acc(grads, *a) {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += gd[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Relu(a) => {
                let xin = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for (j, x) in d.iter_mut().enumerate() {
                        if xin[j] > 0.0 {
                            *x += gd[j];
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let xin = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += if xin[j] > 0.0 { gd[j] } else { slope * gd[j] };
                    }
                }
            }
            Op::Softplus(a) => {
                let xin = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += gd[j] * sigmoid(xin[j]);
                    }
                }
            }
            Op::SegmentSoftmax {
                input,
                segments,
                count,
            } => {
                let y = node.value.data();
                let cols = node.value.cols();
                let mut dots = vec![0.0; count * cols];
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..cols {
                        dots[s as usize * cols + c] += y[r * cols + c] * gd[r * cols + c];
                    }
                }
                if let Some(d) = self.acc(grads, *input) {
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..cols {
                            let j = r * cols + c;
                            d[j] += y[j] * (gd[j] - dots[s as usize * cols + c]);
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let s = gd[0];
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::SegmentSum { input, segments } => {
                let cols = g.cols();
                if let Some(d) = self.acc(grads, *input) {
                    for (r, &s) in segments.iter().enumerate() {
                        for k in 0..cols {
                            d[r * cols + k] += gd[s as usize * cols + k];
                        }
                    }
                }
            }
            Op::GatherRows { input, index } => {
                let cols = g.cols();
                if let Some(d) = self.acc(grads, *input) {
                    for (r, &src) in index.iter().enumerate() {
                        for k in 0..cols {
                            d[src as usize * cols + k] += gd[r * cols + k];
                        }
                    }
                }
            }
            Op::ScaleRows { input, factors } => {
                let cols = g.cols();
                if let Some(d) = self.acc(grads, *input) {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += gd[j] * factors[j / cols];
                    }
                }
            }
            Op::HeadDot {
                input,
                weights,
                heads,
            } => {
                let (xv, wv) = (self.value(*input), self.value(*weights));
                let width = xv.cols();
                let dim = width / heads;
                if let Some(d) = self.acc(grads, *input) {
                    for r in 0..xv.rows() {
                        for h in 0..*heads {
                            let go = gd[r * heads + h];
                            for k in h * dim..(h + 1) * dim {
                                d[r * width + k] += go * wv.data()[k];
                            }
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *weights) {
                    for r in 0..xv.rows() {
                        let row = xv.row_slice(r);
                        for h in 0..*heads {
                            let go = gd[r * heads + h];
                            for k in h * dim..(h + 1) * dim {
                                d[k] += go * row[k];
                            }
                        }
                    }
                }
            }
            Op::EdgeAggregate {
                values,
                gate,
                src,
                dst,
                heads,
            } => {
                let (pv, gv) = (self.value(*values), self.value(*gate));
                let width = pv.cols();
                let dim = width / heads;
                if let Some(d) = self.acc(grads, *values) {
                    for e in 0..src.len() {
                        let (s, t) = (src[e] as usize, dst[e] as usize);
                        let up = &gd[t * width..(t + 1) * width];
                        let to = &mut d[s * width..(s + 1) * width];
                        let gates = &gv.data()[e * heads..(e + 1) * heads];
                        for ((to, up), &w) in to.chunks_exact_mut(dim).zip(up.chunks_exact(dim)).zip(gates) {
                            axpy(w, up, to);
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *gate) {
                    for e in 0..src.len() {
                        let (s, t) = (src[e] as usize, dst[e] as usize);
                        let from = pv.row_slice(s);
                        let up = &gd[t * width..(t + 1) * width];
                        for (h, (a, b)) in from.chunks_exact(dim).zip(up.chunks_exact(dim)).enumerate() {
                            d[e * heads + h] += dot(a, b);
                        }
                    }
                }
            }
            Op::HeadMean { input, heads } => {
                let dim = g.cols();
                let width = dim * heads;
                if let Some(d) = self.acc(grads, *input) {
                    for r in 0..g.rows() {
                        for h in 0..*heads {
                            for k in 0..dim {
                                d[r * width + h * dim + k] += gd[r * dim + k] / *heads as f64;
                            }
                        }
                    }
                }
            }
            Op::Bce {
                input,
                target,
                reduction,
            } => {
                let pv = self.value(*input).data();
                let scale = match reduction {
                    Reduction::Sum => gd[0],
                    Reduction::Mean => gd[0] / pv.len() as f64,
                };
                if let Some(d) = self.acc(grads, *input) {
                    for (j, x) in d.iter_mut().enumerate() {
                        let p = pv[j];
                        if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                            continue;
                        }
                        let t = target.data()[j];
                        *x += scale * ((p - t) / (p * (1.0 - p)));
                    }
                }
            }
            Op::Mse {
                input,
                target,
                reduction,
            } => {
                let pv = self.value(*input).data();
                let scale = match reduction {
                    Reduction::Sum => gd[0],
                    Reduction::Mean => gd[0] / pv.len() as f64,
                };
                if let Some(d) = self.acc(grads, *input) {
                    for (j, x) in d.iter_mut().enumerate() {
                        *x += scale * 2.0 * (pv[j] - target.data()[j]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn single_element_segment_softmax_is_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 2, vec![5.0, -1.0, 0.3, 0.2, 7.0, 9.0]).unwrap());
        let y = tape
            .segment_softmax(x, Arc::new(vec![0, 1, 2]), 3)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bce_at_one_half_is_ln2() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::filled(2, 3, 0.5));
        let target = Arc::new(Tensor::matrix(2, 3, vec![0.0, 1.0, 0.3, 1.0, 0.9, 0.0]).unwrap());
        let l = tape.bce_loss(p, target, Reduction::Mean).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        let grads = tape.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn untracked_inputs_have_no_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]), true);
        let c = tape.constant(Tensor::row(vec![3.0, 4.0]));
        let p = tape.mul(x, c).unwrap();
        let l = tape.sum(p);
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let l = tape.scale(x, 3.0);
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(Error::Backward(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        match tape.matmul(a, b) {
            Err(Error::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "matmul");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(tape.add(a, c).is_err());
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]), true);
        assert!(tape.backward(x).is_err());
    }
}
