//! Reverse-mode differentiation over a linear record of primitive operations.
//!
//! Every operation appends a node to the [`Tape`] and returns a [`Var`]
//! handle. Nodes only keep their backward rule when at least one input
//! requires a gradient, so constant subgraphs cost nothing at backward time.
//! Binary elementwise operations broadcast over leading axes: an operand
//! whose shape is a suffix of the other's is repeated.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    MaxConst(Var, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Softmax(Var),
    LogSumExp(Var),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Select(Var, Vec<(usize, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of executed operations. One backward pass per tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
}

/// Which operand of a binary op is repeated over leading axes.
#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Broadcast)> {
    if a == b {
        return Ok((a.to_vec(), Broadcast::None));
    }
    if b.len() < a.len() && a.ends_with(b) {
        return Ok((a.to_vec(), Broadcast::Rhs));
    }
    if a.len() < b.len() && b.ends_with(a) {
        return Ok((b.to_vec(), Broadcast::Lhs));
    }
    Err(Error::shape(op, format!("{a:?} vs {b:?} (only leading-axis broadcasting)")))
}

/// `(outer, dim, inner)` extents around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
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

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::domain(name, "non-finite result"));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, _) = broadcast_shapes(name, av.shape(), bv.shape())?;
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let (na, nb) = (ad.len(), bd.len());
        let data = (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect();
        self.push(name, Tensor::from_parts(shape, data), op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.nodes[x.0].value.map(f);
        self.push(name, value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[b.0].value.data().iter().any(|&v| v == 0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary("neg", x, |v| -v, Op::Neg(x))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("mul_scalar", x, |v| v * c, Op::MulScalar(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.nodes[x.0].value.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::domain("log", "argument must be positive"));
        }
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if self.nodes[x.0].value.data().iter().any(|&v| v < 0.0) {
            return Err(Error::domain("sqrt", "argument must be non-negative"));
        }
        self.unary("sqrt", x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, f64::abs, Op::Abs(x))
    }

    /// Elementwise `max(x, c)`; `relu` is `max_const(x, 0)`.
    pub fn max_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("max_const", x, |v| v.max(c), Op::MaxConst(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.max_const(x, 0.0)
    }

    /// Elementwise `min(x, c)`, built from negation and `max_const`.
    pub fn min_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let n = self.neg(x)?;
        let m = self.max_const(n, -c)?;
        self.neg(m)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(av.data(), bv.data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], data), Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.rank() != 2 {
            return Err(Error::shape("transpose", format!("rank {} tensor", v.rank())));
        }
        let (m, n) = (v.shape()[0], v.shape()[1]);
        let data = transpose_raw(v.data(), m, n);
        self.push("transpose", Tensor::from_parts(vec![n, m], data), Op::Transpose(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let m = v.sum() / v.numel() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(x), &[x])
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean_axis" } else { "sum_axis" };
        let v = &self.nodes[x.0].value;
        if axis >= v.rank() {
            return Err(Error::shape(name, format!("axis {axis} of {:?}", v.shape())));
        }
        let (outer, dim, inner) = split_axis(v.shape(), axis);
        let d = v.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..dim {
                let src = &d[(o * dim + k) * inner..(o * dim + k + 1) * inner];
                for (acc, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += s;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= dim as f64);
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        let op = if mean {
            Op::MeanAxis(x, axis)
        } else {
            Op::SumAxis(x, axis)
        };
        self.push(name, Tensor::from_parts(shape, out), op, &[x])
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let c = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                z += *e;
            }
            row.iter_mut().for_each(|e| *e /= z);
        }
        let shape = v.shape().to_vec();
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax(x), &[x])
    }

    /// Stable `log(sum(exp(x)))` over the last axis; the axis is removed.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        let c = v.cols();
        let out = v
            .data()
            .chunks(c)
            .map(|row| {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|e| (e - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let mut shape = v.shape().to_vec();
        shape.pop();
        self.push("logsumexp", Tensor::from_parts(shape, out), Op::LogSumExp(x), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.nodes[first.0].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for v in xs {
            let s = self.nodes[v.0].value.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = &self.nodes[v.0].value;
                let d = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", Tensor::from_parts(shape, data), Op::Concat(xs.to_vec(), axis), xs)
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if axis >= v.rank() || len == 0 || start + len > v.shape()[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, v.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(v.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * dim + start) * inner;
            data.extend_from_slice(&v.data()[from..from + len * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        self.push("narrow", Tensor::from_parts(shape, data), Op::Narrow { x, axis, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.nodes[x.0].value.reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    /// Median of all elements; the gradient flows to the middle order statistic(s).
    pub fn median(&mut self, x: Var) -> Result<Var> {
        let d = self.nodes[x.0].value.data();
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
        let n = idx.len();
        let picks = if n % 2 == 1 {
            vec![(idx[n / 2], 1.0)]
        } else {
            vec![(idx[n / 2 - 1], 0.5), (idx[n / 2], 0.5)]
        };
        let m = picks.iter().map(|&(i, w)| w * d[i]).sum();
        self.push("median", Tensor::scalar(m), Op::Select(x, picks), &[x])
    }

    /// Multiplies each row of `x: [N, ...]` by the matching entry of `c: [N]`.
    ///
    /// Realized as transpose / leading-axis broadcast / transpose for matrices.
    pub fn mul_rows(&mut self, x: Var, c: Var) -> Result<Var> {
        let xt = self.transpose(x)?;
        let p = self.mul(xt, c)?;
        self.transpose(p)
    }

    /// Adds `c: [N]` to each row of `x: [N, D]`.
    pub fn add_rows(&mut self, x: Var, c: Var) -> Result<Var> {
        let xt = self.transpose(x)?;
        let p = self.add(xt, c)?;
        self.transpose(p)
    }

    /// Column `j` of a matrix, as a vector of length `rows`.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var> {
        let n = self.shape(x)[0];
        let c = self.narrow(x, 1, j, 1)?;
        self.reshape(c, &[n])
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Contract(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let bt = transpose_raw(val(*b), k, n);
                let ga = matmul_raw(gd, &bt, m, n, k);
                self.accumulate(grads, *a, |s| add_into(s, &ga));
                let at = transpose_raw(val(*a), m, k);
                let gb = matmul_raw(&at, gd, k, m, n);
                self.accumulate(grads, *b, |s| add_into(s, &gb));
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let gt = transpose_raw(gd, s[0], s[1]);
                self.accumulate(grads, *x, |acc| add_into(acc, &gt));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(grads, *a, |s| reduce_into(s, gd, |_, gi| gi));
                self.accumulate(grads, *b, |s| reduce_into(s, gd, |_, gi| sign * gi));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let (na, nb) = (ad.len(), bd.len());
                self.accumulate(grads, *a, |s| reduce_into(s, gd, |j, gi| gi * bd[j % nb]));
                self.accumulate(grads, *b, |s| reduce_into(s, gd, |j, gi| gi * ad[j % na]));
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let (na, nb) = (ad.len(), bd.len());
                self.accumulate(grads, *a, |s| reduce_into(s, gd, |j, gi| gi / bd[j % nb]));
                self.accumulate(grads, *b, |s| {
                    reduce_into(s, gd, |j, gi| {
                        let bv = bd[j % nb];
                        -gi * ad[j % na] / (bv * bv)
                    })
                });
            }
            Op::Neg(x) => self.accumulate(grads, *x, |s| zip_into(s, gd, |_, gi| -gi)),
            Op::AddScalar(x) => self.accumulate(grads, *x, |s| add_into(s, gd)),
            Op::MulScalar(x, c) => self.accumulate(grads, *x, |s| zip_into(s, gd, |_, gi| c * gi)),
            Op::Tanh(x) => {
                self.accumulate(grads, *x, |s| zip_into(s, gd, |j, gi| gi * (1.0 - y[j] * y[j])))
            }
            Op::Exp(x) => self.accumulate(grads, *x, |s| zip_into(s, gd, |j, gi| gi * y[j])),
            Op::Log(x) => {
                let xd = val(*x);
                self.accumulate(grads, *x, |s| zip_into(s, gd, |j, gi| gi / xd[j]))
            }
            Op::Sqrt(x) => {
                if y.iter().any(|&v| v == 0.0) {
                    return Err(Error::domain("sqrt", "unbounded derivative at zero"));
                }
                self.accumulate(grads, *x, |s| zip_into(s, gd, |j, gi| gi / (2.0 * y[j])))
            }
            Op::Abs(x) => {
                let xd = val(*x);
                self.accumulate(grads, *x, |s| {
                    zip_into(s, gd, |j, gi| {
                        if xd[j] > 0.0 {
                            gi
                        } else if xd[j] < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                })
            }
            Op::MaxConst(x, c) => {
                let xd = val(*x);
                self.accumulate(grads, *x, |s| {
                    zip_into(s, gd, |j, gi| if xd[j] > *c { gi } else { 0.0 })
                })
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                self.accumulate(grads, *x, |s| s.iter_mut().for_each(|e| *e += g0))
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel() as f64;
                let g0 = gd[0] / n;
                self.accumulate(grads, *x, |s| s.iter_mut().for_each(|e| *e += g0))
            }
            Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
                let (outer, dim, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                let scale = if matches!(node.op, Op::MeanAxis(..)) {
                    1.0 / dim as f64
                } else {
                    1.0
                };
                self.accumulate(grads, *x, |s| {
                    for o in 0..outer {
                        for k in 0..dim {
                            for t in 0..inner {
                                s[(o * dim + k) * inner + t] += scale * gd[o * inner + t];
                            }
                        }
                    }
                })
            }
            Op::Softmax(x) => {
                let c = node.value.cols();
                self.accumulate(grads, *x, |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(c).zip(y.chunks(c)).zip(gd.chunks(c)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((e, &yv), &gv) in srow.iter_mut().zip(yrow).zip(grow) {
                            *e += yv * (gv - dot);
                        }
                    }
                })
            }
            Op::LogSumExp(x) => {
                let xd = val(*x);
                let c = self.nodes[x.0].value.cols();
                self.accumulate(grads, *x, |s| {
                    for (r, (srow, xrow)) in s.chunks_mut(c).zip(xd.chunks(c)).enumerate() {
                        for (e, &xv) in srow.iter_mut().zip(xrow) {
                            *e += gd[r] * (xv - y[r]).exp();
                        }
                    }
                })
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in xs {
                    let d = self.nodes[v.0].value.shape()[*axis];
                    self.accumulate(grads, *v, |s| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * d * inner;
                            add_into(&mut s[dst..dst + d * inner], &gd[src..src + d * inner]);
                        }
                    });
                    offset += d;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, dim, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *x, |s| {
                    for o in 0..outer {
                        let dst = (o * dim + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut s[dst..dst + len * inner], &gd[src..src + len * inner]);
                    }
                })
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |s| add_into(s, gd)),
            Op::Select(x, picks) => self.accumulate(grads, *x, |s| {
                for &(j, w) in picks {
                    s[j] += w * gd[0];
                }
            }),
        }
        Ok(())
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn zip_into(acc: &mut [f64], g: &[f64], f: impl Fn(usize, f64) -> f64) {
    for (j, (a, &gi)) in acc.iter_mut().zip(g).enumerate() {
        *a += f(j, gi);
    }
}

/// Accumulates `f(j, g[j])` into `acc[j % acc.len()]`, which sums the
/// gradient over the leading axes an operand was broadcast along.
fn reduce_into(acc: &mut [f64], g: &[f64], f: impl Fn(usize, f64) -> f64) {
    let n = acc.len();
    for (j, &gi) in g.iter().enumerate() {
        acc[j % n] += f(j, gi);
    }
}
