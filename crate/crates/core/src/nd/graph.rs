//! Reverse-mode differentiation over a single forward pass.
//!
//! A [`Graph`] is an append-only arena: every operation pushes a node whose
//! inputs have smaller indices, so reverse index order is a valid
//! topological order for the backward sweep.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nd::{ParamId, ParamStore, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulRows(Var, Var),
    Concat(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    Cos(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    L1Rows(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer of `var`, or `None` when no path reaches it.
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += *b),
        None => *slot = Some(delta.to_vec()),
    }
}

fn check_index(idx: &[usize], len: usize, what: &'static str) -> Result<()> {
    match idx.iter().find(|&&i| i >= len) {
        Some(&index) => Err(Error::IndexOutOfRange { what, index, len }),
        None => Ok(()),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no parameter update.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a parameter; its gradient flows back via [`Graph::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let value = Tensor::new(t.rows(), t.cols(), t.data().to_vec())
            .expect("parameter shape is consistent");
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// `n x k` plus a `1 x k` row broadcast over every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", ta, tr));
        }
        let k = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tr.data()[i % k])
            .collect();
        let out = Tensor::new(ta.rows(), k, data)?;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddConst(a))
    }

    /// Scales row `i` of an `n x k` tensor by entry `i` of an `n x 1` column.
    pub fn mul_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(mismatch("mul_rows", ta, tc));
        }
        let k = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * tc.data()[i / k])
            .collect();
        let out = Tensor::new(ta.rows(), k, data)?;
        Ok(self.push(out, Op::MulRows(a, col)))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Row lookup: output row `i` is row `idx[i]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        check_index(&idx, ta.rows(), "gather")?;
        let k = ta.cols();
        let mut data = Vec::with_capacity(idx.len() * k);
        for &i in idx.iter() {
            data.extend_from_slice(ta.row(i));
        }
        let out = Tensor::new(idx.len(), k, data)?;
        Ok(self.push(out, Op::Gather(a, idx)))
    }

    /// Sums rows sharing a segment id into `segments` output rows.
    pub fn segment_sum(&mut self, a: Var, seg: Rc<[usize]>, segments: usize) -> Result<Var> {
        let ta = self.value(a);
        if seg.len() != ta.rows() {
            return Err(Error::ShapeMismatch {
                op: "segment_sum",
                left: ta.shape(),
                right: [seg.len(), 1],
            });
        }
        check_index(&seg, segments, "segment")?;
        let k = ta.cols();
        let mut out = Tensor::zeros(segments, k);
        for (r, &s) in seg.iter().enumerate() {
            let src = ta.row(r);
            for (c, &x) in src.iter().enumerate() {
                let v = out.get(s, c) + x;
                out.set(s, c, v);
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, seg)))
    }

    /// Softmax of an `n x 1` score column, normalised within each segment.
    pub fn segment_softmax(&mut self, a: Var, seg: Rc<[usize]>) -> Result<Var> {
        let ta = self.value(a);
        if ta.cols() != 1 || seg.len() != ta.rows() {
            return Err(Error::ShapeMismatch {
                op: "segment_softmax",
                left: ta.shape(),
                right: [seg.len(), 1],
            });
        }
        let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (&s, &x) in seg.iter().zip(ta.data()) {
            if x > max[s] {
                max[s] = x;
            }
        }
        let mut out: Vec<f64> = seg
            .iter()
            .zip(ta.data())
            .map(|(&s, &x)| libm::exp(x - max[s]))
            .collect();
        let mut total = vec![0.0; segments];
        for (&s, &e) in seg.iter().zip(&out) {
            total[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(seg.iter()) {
            *o /= total[s];
        }
        let out = Tensor::column(out);
        Ok(self.push(out, Op::SegmentSoftmax(a, seg)))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::cos);
        self.push(out, Op::Cos(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::log);
        self.push(out, Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| leaky_relu(x, slope));
        self.push(out, Op::LeakyRelu(a, slope))
    }

    /// `max(x, 0)`.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| leaky_relu(x, 0.0));
        self.push(out, Op::LeakyRelu(a, 0.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Row-wise L1 norm, `n x k -> n x 1`.
    pub fn l1_norm_rowwise(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let norms = (0..ta.rows())
            .map(|r| ta.row(r).iter().map(|x| x.abs()).sum())
            .collect();
        let out = Tensor::column(norms);
        self.push(out, Op::L1Rows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a)))
    }

    /// Backward sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != [1, 1] {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: out.shape(),
                right: [1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let gt = Tensor::new(y.rows(), y.cols(), g.to_vec()).expect("grad shape");
                let ga = gt.matmul(&tb.transpose()).expect("matmul grad");
                let gb = ta.transpose().matmul(&gt).expect("matmul grad");
                add_into(&mut grads[a.0], ga.data());
                add_into(&mut grads[b.0], gb.data());
            }
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], g);
                add_into(&mut grads[b.0], g);
            }
            Op::Sub(a, b) => {
                add_into(&mut grads[a.0], g);
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                add_into(&mut grads[b.0], &neg);
            }
            Op::Mul(a, b) => {
                let ta = self.value(*a).data();
                let tb = self.value(*b).data();
                let ga: Vec<f64> = g.iter().zip(tb).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = g.iter().zip(ta).map(|(g, a)| g * a).collect();
                add_into(&mut grads[a.0], &ga);
                add_into(&mut grads[b.0], &gb);
            }
            Op::AddRow(a, row) => {
                add_into(&mut grads[a.0], g);
                let k = y.cols();
                let mut gr = vec![0.0; k];
                for (j, x) in g.iter().enumerate() {
                    gr[j % k] += x;
                }
                add_into(&mut grads[row.0], &gr);
            }
            Op::Scale(a, f) => {
                let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::AddConst(a) => add_into(&mut grads[a.0], g),
            Op::MulRows(a, col) => {
                let ta = self.value(*a);
                let tc = self.value(*col).data();
                let k = ta.cols();
                let ga: Vec<f64> = g.iter().enumerate().map(|(j, x)| x * tc[j / k]).collect();
                let mut gc = vec![0.0; tc.len()];
                for (j, (x, v)) in g.iter().zip(ta.data()).enumerate() {
                    gc[j / k] += x * v;
                }
                add_into(&mut grads[a.0], &ga);
                add_into(&mut grads[col.0], &gc);
            }
            Op::Concat(parts) => {
                let rows = y.rows();
                let cols = y.cols();
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    let mut gp = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * cols + offset..r * cols + offset + pc]);
                    }
                    add_into(&mut grads[p.0], &gp);
                    offset += pc;
                }
            }
            Op::Gather(a, idx) => {
                let ta = self.value(*a);
                let k = ta.cols();
                let mut ga = vec![0.0; ta.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..k {
                        ga[src * k + c] += g[r * k + c];
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::SegmentSum(a, seg) => {
                let k = y.cols();
                let mut ga = Vec::with_capacity(seg.len() * k);
                for &s in seg.iter() {
                    ga.extend_from_slice(&g[s * k..(s + 1) * k]);
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::SegmentSoftmax(a, seg) => {
                let segments = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; segments];
                for ((&s, &yv), &gv) in seg.iter().zip(y.data()).zip(g) {
                    dot[s] += yv * gv;
                }
                let ga: Vec<f64> = seg
                    .iter()
                    .zip(y.data())
                    .zip(g)
                    .map(|((&s, &yv), &gv)| yv * (gv - dot[s]))
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Cos(a) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(g, &x)| -g * libm::sin(x)).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g.iter().zip(y.data()).map(|(g, y)| g * y).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g.iter().zip(x).map(|(g, x)| g / x).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x >= 0.0 { *g } else { g * slope })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x < *lo || x > *hi { 0.0 } else { *g })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::L1Rows(a) => {
                let ta = self.value(*a);
                let k = ta.cols();
                let ga: Vec<f64> = ta
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| g[j / k] * sign(x))
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                add_into(&mut grads[a.0], &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                add_into(&mut grads[a.0], &vec![g[0] / n as f64; n]);
            }
        }
    }

    /// Adds the gradient of every parameter leaf into the store's buffers.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_deref()) {
                store.get_mut(*id).accumulate_grad(g);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `x` for non-negative input, `slope * x` otherwise.
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Max-subtracted softmax of a plain vector.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    let exps: Vec<f64> = scores.iter().map(|&s| libm::exp(s - max)).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
