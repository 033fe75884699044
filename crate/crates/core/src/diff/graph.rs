//! Reverse-mode tape over dense tensors.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse insertion order, which is a valid reverse
//! topological order since nodes only reference earlier nodes.
//!
//! Shape mismatches inside the tape are programming errors and panic; the
//! public building blocks ([`super::MlpBlock`], [`super::GruCell`]) validate
//! their inputs up front and return [`crate::Error::Dimension`].

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    LogClamped(Var, f64),
    Square(Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    ScaleRows(Var, Var),
    Column(Var, usize),
    Transpose(Var),
    Reshape(Var),
    StraightThrough(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. One graph per forward pass; not shared across threads.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if cols == 0 {
        return out;
    }
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf carrying the current value of a stored parameter. Repeated calls
    /// for the same id return the same node, so gradients accumulate.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    /// Copy of `v` with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul needs 2-D operands");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        assert_eq!(k, sb[0], "matmul inner dimension");
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// `a + b` with `b` broadcast along every row of `a`.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let cols = self.value(a).last_dim();
        assert_eq!(self.value(b).numel(), cols, "bias width");
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        if cols > 0 {
            for row in out.data_mut().chunks_mut(cols) {
                for (o, &bv) in row.iter_mut().zip(&bias) {
                    *o += bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::AddBias(a, b), rg)
    }

    fn zip_op(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shapes");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map_op(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, data), op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map_op(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map_op(a, |x| x + c, Op::Offset(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.scale(a, -1.0);
        self.offset(n, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_op(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map_op(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map_op(a, f64::exp, Op::Exp(a))
    }

    /// `ln(max(a, floor))`; gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        self.map_op(a, |x| x.max(floor).ln(), Op::LogClamped(a, floor))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = softmax_rows(t.data(), t.last_dim());
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let cols = t.last_dim();
        let mut out = t.data().to_vec();
        if cols > 0 {
            for row in out.chunks_mut(cols) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(Tensor::from_parts(shape, out), Op::LogSoftmax(a), rg)
    }

    /// Concatenate along the trailing axis; all parts must share a row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        for &p in parts {
            assert_eq!(self.value(p).rows(), rows, "concat row count");
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    /// `out[k] = a[idx[k]]` row-wise.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let rows = t.rows();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            assert!(i < rows, "gather index out of range");
            out.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(vec![idx.len(), c], out),
            Op::GatherRows(a, idx),
            rg,
        )
    }

    /// `out[idx[k]] += a[k]`, producing `n_out` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n_out: usize) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        assert_eq!(t.rows(), idx.len(), "scatter index length");
        let mut out = vec![0.0; n_out * c];
        for (k, &i) in idx.iter().enumerate() {
            assert!(i < n_out, "scatter index out of range");
            for (o, &v) in out[i * c..(i + 1) * c]
                .iter_mut()
                .zip(&t.data()[k * c..(k + 1) * c])
            {
                *o += v;
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::from_parts(vec![n_out, c], out),
            Op::ScatterAddRows(a, idx),
            rg,
        )
    }

    /// Multiply row `r` of `a` by `w[r]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let rows = t.rows();
        assert_eq!(self.value(w).numel(), rows, "row weight count");
        let wd = self.value(w).data();
        let mut out = t.data().to_vec();
        if c > 0 {
            for (row, &wv) in out.chunks_mut(c).zip(wd) {
                row.iter_mut().for_each(|x| *x *= wv);
            }
        }
        let shape = vec![rows, c];
        let rg = self.rg(a) || self.rg(w);
        self.push(Tensor::from_parts(shape, out), Op::ScaleRows(a, w), rg)
    }

    /// Column `j` of `a` viewed as `[rows, last_dim]`.
    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        assert!(j < c, "column index");
        let out: Vec<f64> = (0..t.rows()).map(|r| t.data()[r * c + j]).collect();
        let rg = self.rg(a);
        self.push(Tensor::vector(out), Op::Column(a, j), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape().len(), 2, "transpose needs 2-D");
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone();
        let t = t.reshaped(shape.to_vec()).expect("reshape size");
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Forward: one-hot at the trailing-axis argmax of `soft`.
    /// Backward: identity into `soft`.
    pub fn straight_through(&mut self, soft: Var) -> Var {
        let t = self.value(soft);
        let c = t.last_dim();
        let mut out = vec![0.0; t.numel()];
        if c > 0 {
            for (src, dst) in t.data().chunks(c).zip(out.chunks_mut(c)) {
                let mut best = 0;
                for k in 1..c {
                    if src[k] > src[best] {
                        best = k;
                    }
                }
                dst[best] = 1.0;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(soft);
        self.push(
            Tensor::from_parts(shape, out),
            Op::StraightThrough(soft),
            rg,
        )
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter that entered this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = self
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.value(v).numel()]);
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Accumulate gradients of the scalar `loss` into every reachable node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot =
                grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        let out = &nodes[i].value;

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    // dA = G B^T
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    // dB = A^T G
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let arp = ad[r * k + p];
                            if arp == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += arp * gv;
                            }
                        }
                    }
                });
            }
            Op::AddBias(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                let c = val(*b).numel();
                acc(*b, &mut |gb| {
                    if c > 0 {
                        for row in g.chunks(c) {
                            gb.iter_mut().zip(row).for_each(|(o, &x)| *o += x);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * bd[k];
                    }
                });
                acc(*b, &mut |gb| {
                    for k in 0..gb.len() {
                        gb[k] += g[k] * ad[k];
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += c * x));
            }
            Op::Offset(a) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        if x[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += g[k] * y[k];
                    }
                });
            }
            Op::LogClamped(a, floor) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        if x[k] > *floor {
                            ga[k] += g[k] / x[k];
                        }
                    }
                });
            }
            Op::Square(a) => {
                let x = val(*a).data();
                acc(*a, &mut |ga| {
                    for k in 0..ga.len() {
                        ga[k] += 2.0 * g[k] * x[k];
                    }
                });
            }
            Op::Sum(a) => {
                let s = g[0];
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += s));
            }
            Op::Softmax(a) => {
                let y = out.data();
                let c = out.last_dim();
                acc(*a, &mut |ga| {
                    if c == 0 {
                        return;
                    }
                    for ((gr, yr), gar) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for k in 0..c {
                            gar[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = out.data();
                let c = out.last_dim();
                acc(*a, &mut |ga| {
                    if c == 0 {
                        return;
                    }
                    for ((gr, yr), gar) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let total: f64 = gr.iter().sum();
                        for k in 0..c {
                            gar[k] += gr[k] - yr[k].exp() * total;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let rows = out.rows();
                let total = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    acc(p, &mut |gp| {
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += g[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows(a, idx) => {
                let c = out.last_dim();
                acc(*a, &mut |ga| {
                    for (k, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            ga[src * c + j] += g[k * c + j];
                        }
                    }
                });
            }
            Op::ScatterAddRows(a, idx) => {
                let c = out.last_dim();
                acc(*a, &mut |ga| {
                    for (k, &dst) in idx.iter().enumerate() {
                        for j in 0..c {
                            ga[k * c + j] += g[dst * c + j];
                        }
                    }
                });
            }
            Op::ScaleRows(a, w) => {
                let c = out.last_dim();
                let (ad, wd) = (val(*a).data(), val(*w).data());
                acc(*a, &mut |ga| {
                    for (r, &wv) in wd.iter().enumerate() {
                        for j in 0..c {
                            ga[r * c + j] += g[r * c + j] * wv;
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for r in 0..gw.len() {
                        gw[r] += (0..c).map(|j| g[r * c + j] * ad[r * c + j]).sum::<f64>();
                    }
                });
            }
            Op::Column(a, j) => {
                let c = val(*a).last_dim();
                acc(*a, &mut |ga| {
                    for (r, &gv) in g.iter().enumerate() {
                        ga[r * c + j] += gv;
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) | Op::StraightThrough(a) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
            }
        }
    }
}
