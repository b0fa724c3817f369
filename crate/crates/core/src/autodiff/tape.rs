use std::collections::HashMap;

use super::{AutodiffError, Gradients, ParamId, ParamStore, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulCol(usize, usize),
    Affine(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<u32>,
        ignore: Option<u32>,
        count: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Gather {
        table: usize,
        ids: Vec<u32>,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    SliceRows {
        a: usize,
        start: usize,
    },
    Transpose(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Sum(usize),
    Mean(usize),
    RowDot(usize, usize),
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// A recording tape keeps enough information on every node to run
/// [`Tape::backward`]; an inference tape only stores values.
pub struct Tape<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    recording: bool,
    leaf_grads: HashMap<usize, Vec<T>>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

fn transpose_data<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn log_softmax_row<T: Scalar>(x: &[T], out: &mut [T]) {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let lse = x.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    /// Recording tape reading parameters from `params`.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self::build(Some(params), true)
    }

    /// Non-recording tape for evaluation-mode forward passes.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self::build(Some(params), false)
    }

    /// Recording tape with no parameter store, for free-standing variables.
    pub fn standalone() -> Self {
        Self::build(None, true)
    }

    fn build(params: Option<&'p ParamStore<T>>, recording: bool) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            recording,
            leaf_grads: HashMap::new(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let rg = self.recording && requires_grad;
        let op = if rg { op } else { Op::Leaf };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameter leaf; repeated lookups return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.params.is_some(), "tape has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
            requires_grad: self.recording,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Parameters read by this tape so far, sorted by id.
    pub fn touched_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.param_vars.keys().copied().collect();
        ids.sort();
        ids
    }

    /// Trainable free-standing leaf; its gradient is readable via [`Tape::grad`].
    pub fn var(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Same values, no gradient path.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(mismatch("matmul", &ta.shape, &tb.shape));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(&ta.data, &tb.data, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a.0, b.0), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n, k2) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(mismatch("matmul_t", &ta.shape, &tb.shape));
        }
        let bt = transpose_data(&tb.data, n, k);
        let mut out = vec![T::zero(); m * n];
        matmul_into(&ta.data, &bt, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMulT(a.0, b.0), rg))
    }

    /// Elementwise sum; `b` may also be a row vector broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        if ta.shape == tb.shape {
            let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x + y).collect();
            let shape = ta.shape.clone();
            return Ok(self.push(Tensor { shape, data }, Op::Add(a.0, b.0), rg));
        }
        let n = ta.cols();
        if tb.numel() == n && tb.rows() == 1 {
            let mut data = ta.data.clone();
            for row in data.chunks_mut(n) {
                for (x, &y) in row.iter_mut().zip(&tb.data) {
                    *x = *x + y;
                }
            }
            let shape = ta.shape.clone();
            return Ok(self.push(Tensor { shape, data }, Op::AddRow(a.0, b.0), rg));
        }
        Err(mismatch("add", &ta.shape, &tb.shape))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(mismatch("sub", &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x - y).collect();
        let shape = ta.shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Sub(a.0, b.0), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(mismatch("mul", &ta.shape, &tb.shape));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect();
        let shape = ta.shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a.0, b.0), rg))
    }

    /// Scales each row of `a` by the matching entry of the column `c` (`[m, 1]`).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(c));
        let (m, n) = (ta.rows(), ta.cols());
        if tc.numel() != m {
            return Err(mismatch("mul_col", &ta.shape, &tc.shape));
        }
        let mut data = ta.data.clone();
        for (row, &s) in data.chunks_mut(n.max(1)).zip(&tc.data) {
            row.iter_mut().for_each(|x| *x = *x * s);
        }
        let shape = ta.shape.clone();
        let rg = self.rg(a) || self.rg(c);
        Ok(self.push(Tensor { shape, data }, Op::MulCol(a.0, c.0), rg))
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let (al, be) = (T::of(alpha), T::of(beta));
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| al * x + be).collect();
        let shape = ta.shape.clone();
        let rg = self.rg(a);
        self.push(Tensor { shape, data }, Op::Affine(a.0, al), rg)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.affine(a, alpha, 0.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| f(x)).collect();
        let shape = ta.shape.clone();
        let rg = self.rg(a);
        self.push(Tensor { shape, data }, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a.0))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols().max(1);
        let mut data = vec![T::zero(); ta.numel()];
        for (x, o) in ta.data.chunks(n).zip(data.chunks_mut(n)) {
            softmax_row(x, o);
        }
        let shape = ta.shape.clone();
        let rg = self.rg(a);
        self.push(Tensor { shape, data }, Op::Softmax(a.0), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols().max(1);
        let mut data = vec![T::zero(); ta.numel()];
        for (x, o) in ta.data.chunks(n).zip(data.chunks_mut(n)) {
            log_softmax_row(x, o);
        }
        let shape = ta.shape.clone();
        let rg = self.rg(a);
        self.push(Tensor { shape, data }, Op::LogSoftmax(a.0), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, skipping rows whose target equals `ignore`. Zero when no row
    /// counts.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], ignore: Option<u32>) -> Result<Var> {
        let tl = self.value(logits);
        let (m, v) = (tl.rows(), tl.cols());
        if targets.len() != m {
            return Err(mismatch("cross_entropy", &tl.shape, &[targets.len()]));
        }
        let mut total = 0.0f64;
        let mut count = 0usize;
        let mut row = vec![T::zero(); v];
        for (i, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                continue;
            }
            if t as usize >= v {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: t as usize,
                    size: v,
                });
            }
            log_softmax_row(&tl.data[i * v..(i + 1) * v], &mut row);
            total -= row[t as usize].f64();
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                ignore,
                count,
            },
            rg,
        ))
    }

    /// Concatenates matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.value(parts[0]);
        let (mut rows, mut cols) = (first.rows(), first.cols());
        if axis == 0 {
            rows = 0;
        } else {
            cols = 0;
        }
        for &p in parts {
            let t = self.value(p);
            if axis == 0 {
                if t.cols() != cols {
                    return Err(mismatch("concat", &first.shape, &t.shape));
                }
                rows += t.rows();
            } else {
                if t.rows() != rows {
                    return Err(mismatch("concat", &first.shape, &t.shape));
                }
                cols += t.cols();
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                data.extend_from_slice(&self.value(p).data);
            }
        } else {
            for r in 0..rows {
                for &p in parts {
                    let t = self.value(p);
                    let c = t.cols();
                    data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor { shape: vec![rows, cols], data },
            Op::Concat {
                inputs: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Selects rows of an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tt = self.value(table);
        let (v, e) = (tt.rows(), tt.cols());
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            let i = id as usize;
            if i >= v {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    size: v,
                });
            }
            data.extend_from_slice(&tt.data[i * e..(i + 1) * e]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor { shape: vec![ids.len(), e], data },
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if start > end || end > n {
            return Err(mismatch("slice_cols", &ta.shape, &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&ta.data[r * n + start..r * n + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor { shape: vec![m, w], data }, Op::SliceCols { a: a.0, start }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        if start > end || end > m {
            return Err(mismatch("slice_rows", &ta.shape, &[start, end]));
        }
        let data = ta.data[start * n..end * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor { shape: vec![end - start, n], data },
            Op::SliceRows { a: a.0, start },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = (ta.rows(), ta.cols());
        let data = transpose_data(&ta.data, m, n);
        let rg = self.rg(a);
        self.push(Tensor { shape: vec![n, m], data }, Op::Transpose(a.0), rg)
    }

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.cols();
        if tg.numel() != n || tb.numel() != n {
            return Err(mismatch("layer_norm", &tx.shape, &tg.shape));
        }
        let nt = T::of(n as f64);
        let eps = T::of(eps);
        let mut data = Vec::with_capacity(tx.numel());
        let mut means = Vec::with_capacity(tx.rows());
        let mut inv_stds = Vec::with_capacity(tx.rows());
        for row in tx.data.chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let inv = T::one() / (var + eps).sqrt();
            for (j, &v) in row.iter().enumerate() {
                data.push((v - mean) * inv * tg.data[j] + tb.data[j]);
            }
            means.push(mean);
            inv_stds.push(inv);
        }
        let shape = tx.shape.clone();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor { shape, data },
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean: means,
                inv_std: inv_stds,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let s = ta.data.iter().copied().sum::<T>() / T::of(ta.numel().max(1) as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a.0), rg)
    }

    /// Per-row dot products, shape `[m, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(mismatch("row_dot", &ta.shape, &tb.shape));
        }
        let n = ta.cols().max(1);
        let data: Vec<T> = ta
            .data
            .chunks(n)
            .zip(tb.data.chunks(n))
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
            .collect();
        let m = data.len();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape: vec![m, 1], data }, Op::RowDot(a.0, b.0), rg))
    }

    /// Index of the largest entry of each row (first on ties).
    pub fn argmax_rows(&self, a: Var) -> Vec<u32> {
        let t = self.value(a);
        let n = t.cols().max(1);
        t.data
            .chunks(n)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best as u32
            })
            .collect()
    }

    /// Accumulated gradient of a trainable leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.leaf_grads.get(&v.0).map(|g| Tensor {
            shape: self.value(v).shape.clone(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Back-propagates from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(AutodiffError::NoTape);
        }
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(AutodiffError::NotScalar(lt.shape.clone()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            match self.nodes[i].op {
                Op::Leaf | Op::Param => {
                    let slot = self
                        .leaf_grads
                        .entry(i)
                        .or_insert_with(|| vec![T::zero(); g.len()]);
                    for (s, &d) in slot.iter_mut().zip(&g) {
                        *s = *s + d;
                    }
                }
                _ => self.backprop(i, &g, &mut grads),
            }
        }
        Ok(())
    }

    /// Adds the gradients of every parameter node into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Gradients<T>) {
        for (&id, &v) in &self.param_vars {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                out.add_into(id, g);
            }
        }
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |j: usize| -> &Tensor<T> { self.value(Var(j)) };
        let mut send = |j: usize, d: Vec<T>| {
            if !nodes[j].requires_grad {
                return;
            }
            match &mut grads[j] {
                Some(acc) => {
                    for (a, x) in acc.iter_mut().zip(d) {
                        *a = *a + x;
                    }
                }
                slot @ None => *slot = Some(d),
            }
        };
        let out = val(i);
        match &nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if nodes[*a].requires_grad {
                    let bt = transpose_data(&tb.data, k, n);
                    let mut ga = vec![T::zero(); m * k];
                    matmul_into(g, &bt, &mut ga, m, n, k);
                    send(*a, ga);
                }
                if nodes[*b].requires_grad {
                    let at = transpose_data(&ta.data, m, k);
                    let mut gb = vec![T::zero(); k * n];
                    matmul_into(&at, g, &mut gb, k, m, n);
                    send(*b, gb);
                }
            }
            Op::MatMulT(a, b) => {
                // out = A Bᵀ, A: [m, k], B: [n, k]
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if nodes[*a].requires_grad {
                    let mut ga = vec![T::zero(); m * k];
                    matmul_into(g, &tb.data, &mut ga, m, n, k);
                    send(*a, ga);
                }
                if nodes[*b].requires_grad {
                    let gt = transpose_data(g, m, n);
                    let mut gb = vec![T::zero(); n * k];
                    matmul_into(&gt, &ta.data, &mut gb, n, m, k);
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::AddRow(a, b) => {
                send(*a, g.to_vec());
                if nodes[*b].requires_grad {
                    let n = val(*b).numel();
                    let mut gb = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        for (s, &x) in gb.iter_mut().zip(row) {
                            *s = *s + x;
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if nodes[*a].requires_grad {
                    send(*a, g.iter().zip(&tb.data).map(|(&x, &y)| x * y).collect());
                }
                if nodes[*b].requires_grad {
                    send(*b, g.iter().zip(&ta.data).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::MulCol(a, c) => {
                let (ta, tc) = (val(*a), val(*c));
                let n = ta.cols().max(1);
                if nodes[*a].requires_grad {
                    let mut ga = g.to_vec();
                    for (row, &s) in ga.chunks_mut(n).zip(&tc.data) {
                        row.iter_mut().for_each(|x| *x = *x * s);
                    }
                    send(*a, ga);
                }
                if nodes[*c].requires_grad {
                    let gc = g
                        .chunks(n)
                        .zip(ta.data.chunks(n))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(&x, &y)| x * y).sum())
                        .collect();
                    send(*c, gc);
                }
            }
            Op::Affine(a, alpha) => send(*a, g.iter().map(|&x| x * *alpha).collect()),
            Op::Sigmoid(a) => send(
                *a,
                g.iter()
                    .zip(&out.data)
                    .map(|(&x, &y)| x * y * (T::one() - y))
                    .collect(),
            ),
            Op::Tanh(a) => send(
                *a,
                g.iter()
                    .zip(&out.data)
                    .map(|(&x, &y)| x * (T::one() - y * y))
                    .collect(),
            ),
            Op::Relu(a) => send(
                *a,
                g.iter()
                    .zip(&out.data)
                    .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                    .collect(),
            ),
            Op::Softmax(a) => {
                let n = out.cols().max(1);
                let mut ga = vec![T::zero(); g.len()];
                for ((gr, yr), dr) in g.chunks(n).zip(out.data.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: T = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                    for ((d, &x), &y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = y * (x - dot);
                    }
                }
                send(*a, ga);
            }
            Op::LogSoftmax(a) => {
                let n = out.cols().max(1);
                let mut ga = vec![T::zero(); g.len()];
                for ((gr, yr), dr) in g.chunks(n).zip(out.data.chunks(n)).zip(ga.chunks_mut(n)) {
                    let s: T = gr.iter().copied().sum();
                    for ((d, &x), &y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = x - y.exp() * s;
                    }
                }
                send(*a, ga);
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                count,
            } => {
                let tl = val(*logits);
                let v = tl.cols();
                let mut gl = vec![T::zero(); tl.numel()];
                if *count > 0 {
                    let scale = g[0] / T::of(*count as f64);
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *ignore {
                            continue;
                        }
                        let dr = &mut gl[r * v..(r + 1) * v];
                        softmax_row(&tl.data[r * v..(r + 1) * v], dr);
                        dr[t as usize] = dr[t as usize] - T::one();
                        dr.iter_mut().for_each(|x| *x = *x * scale);
                    }
                }
                send(*logits, gl);
            }
            Op::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut off = 0;
                    for &j in inputs {
                        let len = val(j).numel();
                        send(j, g[off..off + len].to_vec());
                        off += len;
                    }
                } else {
                    let total = out.cols();
                    let rows = out.rows();
                    let mut off = 0;
                    for &j in inputs {
                        let c = val(j).cols();
                        let mut gj = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gj.extend_from_slice(&g[r * total + off..r * total + off + c]);
                        }
                        send(j, gj);
                        off += c;
                    }
                }
            }
            Op::Gather { table, ids } => {
                let tt = val(*table);
                let e = tt.cols();
                let mut gt = vec![T::zero(); tt.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut gt[id as usize * e..(id as usize + 1) * e];
                    for (d, &x) in dst.iter_mut().zip(&g[r * e..(r + 1) * e]) {
                        *d = *d + x;
                    }
                }
                send(*table, gt);
            }
            Op::SliceCols { a, start } => {
                let ta = val(*a);
                let (m, n) = (ta.rows(), ta.cols());
                let w = out.cols();
                let mut ga = vec![T::zero(); m * n];
                for r in 0..m {
                    ga[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                send(*a, ga);
            }
            Op::SliceRows { a, start } => {
                let ta = val(*a);
                let n = ta.cols();
                let mut ga = vec![T::zero(); ta.numel()];
                ga[start * n..start * n + g.len()].copy_from_slice(g);
                send(*a, ga);
            }
            Op::Transpose(a) => {
                let (m, n) = (out.rows(), out.cols());
                send(*a, transpose_data(g, m, n));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let (tx, tg) = (val(*x), val(*gamma));
                let n = tx.cols();
                let nt = T::of(n as f64);
                let mut gx = vec![T::zero(); tx.numel()];
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                for r in 0..tx.rows() {
                    let xr = &tx.data[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let (mu, inv) = (mean[r], inv_std[r]);
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for j in 0..n {
                        let xhat = (xr[j] - mu) * inv;
                        let d = gr[j] * tg.data[j];
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xhat;
                        gg[j] = gg[j] + gr[j] * xhat;
                        gb[j] = gb[j] + gr[j];
                    }
                    for j in 0..n {
                        let xhat = (xr[j] - mu) * inv;
                        let d = gr[j] * tg.data[j];
                        gx[r * n + j] = inv * (nt * d - sum_d - xhat * sum_dx) / nt;
                    }
                }
                send(*x, gx);
                send(*gamma, gg);
                send(*beta, gb);
            }
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).numel()]),
            Op::Mean(a) => {
                let n = val(*a).numel();
                send(*a, vec![g[0] / T::of(n.max(1) as f64); n]);
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let n = ta.cols().max(1);
                if nodes[*a].requires_grad {
                    let mut ga = tb.data.clone();
                    for (row, &s) in ga.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|x| *x = *x * s);
                    }
                    send(*a, ga);
                }
                if nodes[*b].requires_grad {
                    let mut gb = ta.data.clone();
                    for (row, &s) in gb.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|x| *x = *x * s);
                    }
                    send(*b, gb);
                }
            }
        }
    }
}
