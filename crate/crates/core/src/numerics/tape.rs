//! Reverse-mode differentiation over a dynamically recorded operation list.
//!
//! Every forward op appends a node holding its value and enough context to
//! push gradients back to its inputs. `backward` walks the list once in
//! reverse. Nodes never reference later nodes, so the list order is a valid
//! topological order.

use super::tensor::{gemm, Layout, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    PairDot {
        z: Var,
        pairs: Vec<(usize, usize)>,
    },
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
    BceLogits {
        logits: Var,
        target: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Clamp applied to probabilities inside [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Registers a leaf. Gradients are only accumulated for leaves with
    /// `requires_grad` set (and everything downstream of them).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let needs_grad = value.requires_grad;
        self.push_raw(value, Op::Leaf, needs_grad)
    }

    pub fn param(&mut self, value: &Tensor) -> Var {
        let mut v = Tensor::from_vec(value.rows(), value.cols(), value.data().to_vec()).unwrap();
        v.requires_grad = true;
        self.leaf(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let mut value = value;
        value.requires_grad = false;
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, ta.data(), Layout::Normal, tb.data(), Layout::Transposed, out.data_mut());
        self.push("matmul_nt", out, Op::MatMulNt(a, b), &[a, b])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data).unwrap()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1×n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: ta.shape(),
                right: tr.shape(),
            });
        }
        let mut out = ta.clone();
        out.requires_grad = false;
        let r = tr.data().to_vec();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&r).for_each(|(o, b)| *o += b);
        }
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.map(a, |x| x * s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.map(a, |x| x + s);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, |x| x.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.map(a, f64::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a));
        self.push("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        for t in [tg, tb] {
            if t.shape() != (1, n) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: tx.shape(),
                    right: t.shape(),
                });
            }
        }
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        let mut out = Tensor::zeros(tx.rows(), n);
        for i in 0..tx.rows() {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            let o = out.row_mut(i);
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat.push(h);
                o[j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push("layer_norm", out, op, &[x, gamma, beta])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let mut cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: t.shape(),
                });
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            for i in 0..rows {
                out.row_mut(i)[offset..offset + t.cols()].copy_from_slice(t.row(i));
            }
            offset += t.cols();
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Row-wise dot products `z_u · z_v` for each pair, as an `m×1` column.
    pub fn pair_dot(&mut self, z: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let tz = self.value(z);
        let n = tz.rows();
        let mut out = Vec::with_capacity(pairs.len());
        for &(u, v) in pairs {
            if u >= n || v >= n {
                return Err(Error::Shape {
                    op: "pair_dot",
                    left: tz.shape(),
                    right: (u.max(v), 0),
                });
            }
            out.push(dot(tz.row(u), tz.row(v)));
        }
        let out = Tensor::from_vec(pairs.len(), 1, out)?;
        let op = Op::PairDot {
            z,
            pairs: pairs.to_vec(),
        };
        self.push("pair_dot", out, op, &[z])
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets.
    /// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`; the gradient is
    /// zero where the clamp is active.
    pub fn bce(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.len() != target.len() {
            return Err(Error::Shape {
                op: "bce",
                left: tp.shape(),
                right: (target.len(), 1),
            });
        }
        let n = target.len().max(1) as f64;
        let loss = tp
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let op = Op::Bce {
            pred,
            target: target.to_vec(),
        };
        self.push("bce", Tensor::filled(1, 1, loss), op, &[pred])
    }

    /// [`Tape::bce`] of `σ(logits)`, evaluated in logit space. Clamping the
    /// probability to `[BCE_EPS, 1 - BCE_EPS]` is the same as clamping the
    /// logit to `±BCE_LOGIT_MAX`; this form avoids cancellation in `1 − σ`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[f64]) -> Result<Var> {
        let tx = self.value(logits);
        if tx.len() != target.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: tx.shape(),
                right: (target.len(), 1),
            });
        }
        let n = target.len().max(1) as f64;
        let loss = tx.data().iter().zip(target).map(|(&x, &t)| bce_logit(x, t)).sum::<f64>() / n;
        let op = Op::BceLogits {
            logits,
            target: target.to_vec(),
        };
        self.push("bce_with_logits", Tensor::filled(1, 1, loss), op, &[logits])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::filled(1, 1, s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push("mean", Tensor::filled(1, 1, s), Op::Mean(a), &[a])
    }

    /// Back-propagates from the `1×1` node `out`, replacing any previously
    /// computed gradients.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        let shape = self.value(out).shape();
        if shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let live = |v: Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let len = nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |da| {
                    gemm(m, n, k, g, Layout::Normal, tb.data(), Layout::Transposed, da)
                });
                acc(*b, &mut |db| {
                    gemm(k, m, n, ta.data(), Layout::Transposed, g, Layout::Normal, db)
                });
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                acc(*a, &mut |da| {
                    gemm(m, n, k, g, Layout::Normal, tb.data(), Layout::Normal, da)
                });
                acc(*b, &mut |db| {
                    gemm(n, m, k, g, Layout::Transposed, ta.data(), Layout::Normal, db)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |d| add_into(d, g));
                let n = out.cols();
                acc(*row, &mut |d| {
                    for r in g.chunks(n) {
                        add_into(d, r);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((x, gi), bi) in d.iter_mut().zip(g).zip(tb.data()) {
                        *x += gi * bi;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, gi), ai) in d.iter_mut().zip(g).zip(ta.data()) {
                        *x += gi * ai;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| {
                d.iter_mut().zip(g).for_each(|(x, gi)| *x += gi * s)
            }),
            Op::AddScalar(a) => acc(*a, &mut |d| add_into(d, g)),
            Op::Relu(a) => {
                let ta = val(*a);
                acc(*a, &mut |d| {
                    for ((x, gi), xi) in d.iter_mut().zip(g).zip(ta.data()) {
                        if *xi > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                for ((x, gi), y) in d.iter_mut().zip(g).zip(out.data()) {
                    *x += gi * y * (1.0 - y);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |d| {
                for ((x, gi), y) in d.iter_mut().zip(g).zip(out.data()) {
                    *x += gi * y;
                }
            }),
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                acc(*a, &mut |d| {
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let s = dot(gr, yr);
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = out.cols();
                let gm = val(*gamma).data();
                acc(*gamma, &mut |d| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            d[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*beta, &mut |d| {
                    for gr in g.chunks(n) {
                        add_into(d, gr);
                    }
                });
                if live(*x) {
                    acc(*x, &mut |d| {
                        let mut dh = vec![0.0; n];
                        for (r, ((dr, gr), hr)) in
                            d.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate()
                        {
                            for j in 0..n {
                                dh[j] = gr[j] * gm[j];
                            }
                            let m1 = dh.iter().sum::<f64>() / n as f64;
                            let m2 = dot(&dh, hr) / n as f64;
                            for j in 0..n {
                                dr[j] += inv_std[r] * (dh[j] - m1 - hr[j] * m2);
                            }
                        }
                    });
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    acc(*p, &mut |d| {
                        for (dr, gr) in d.chunks_mut(c).zip(g.chunks(total)) {
                            add_into(dr, &gr[offset..offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::PairDot { z, pairs } => {
                let tz = val(*z);
                let c = tz.cols();
                acc(*z, &mut |d| {
                    for (&(u, v), gi) in pairs.iter().zip(g) {
                        for j in 0..c {
                            d[u * c + j] += gi * tz.get(v, j);
                            d[v * c + j] += gi * tz.get(u, j);
                        }
                    }
                });
            }
            Op::Bce { pred, target } => {
                let tp = val(*pred);
                let n = target.len().max(1) as f64;
                acc(*pred, &mut |d| {
                    for ((x, &p), &t) in d.iter_mut().zip(tp.data()).zip(target) {
                        if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                            *x += g[0] * (-(t / p) + (1.0 - t) / (1.0 - p)) / n;
                        }
                    }
                });
            }
            Op::BceLogits { logits, target } => {
                let tx = val(*logits);
                let n = target.len().max(1) as f64;
                acc(*logits, &mut |d| {
                    for ((x, &l), &t) in d.iter_mut().zip(tx.data()).zip(target) {
                        if l.abs() <= BCE_LOGIT_MAX {
                            *x += g[0] * (sigmoid(l) - t) / n;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0] / n));
            }
        }
    }
}

#[inline]
fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(x, y)| *x += y);
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logit at which `σ` reaches `1 - BCE_EPS`.
pub const BCE_LOGIT_MAX: f64 = 16.118_095_550_958_316;

/// BCE of `σ(x)` against `t` with the probability clamp applied as a logit
/// clamp.
#[inline]
pub fn bce_logit(x: f64, t: f64) -> f64 {
    let x = x.clamp(-BCE_LOGIT_MAX, BCE_LOGIT_MAX);
    t * softplus(-x) + (1.0 - t) * softplus(x)
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

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        let mut s = 0.0;
        for (o, &v) in o.iter_mut().zip(row) {
            *o = (v - max).exp();
            s += *o;
        }
        o.iter_mut().for_each(|v| *v /= s);
    }
    out
}
