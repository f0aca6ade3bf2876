use super::{Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    // Concatenation along one axis, also used for stacking. Each part
    // contributes `chunks[i]` contiguous values per outer index.
    Join {
        parts: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Slice {
        input: Var,
        outer: usize,
        in_chunk: usize,
        offset: usize,
        out_chunk: usize,
    },
    Softmax(Var),
    Lookup {
        table: Var,
        indices: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum(Var),
    BatchDot {
        seq: Var,
        query: Var,
    },
    WeightedSum {
        weights: Var,
        seq: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run computation record.
///
/// Nodes are appended in execution order, so every input id precedes its
/// consumer and [`Graph::backward`] can walk the records in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `c = alpha * a * b + beta * c` with explicit strides (row, column).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides index within `a` ([m,k]), `b` ([k,n]) and `c`
    // ([m,n], row-major) as checked by the callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matrix_dims(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    /// Gradient of `v` after [`Graph::backward`]; `None` when the loss does
    /// not depend on `v` or `v` is a constant.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if value.data().iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a trainable leaf. Its gradient is populated by `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (matrix_dims(ta), matrix_dims(tb)) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), 0.0, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs)
    }

    /// `a[m,k] · b[n,k]ᵀ`, the usual layout for a weight matrix applied to a
    /// batch of row vectors.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (matrix_dims(ta), matrix_dims(tb)) {
            (Some((m, k)), Some((n, k2))) if k == k2 => (m, k, n),
            _ => return Err(shape_err("matmul_t", ta, tb)),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (1, k as isize), 0.0, &mut out);
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul_t", Tensor::new(vec![m, n], out)?, Op::MatMulT(a, b), needs)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(name, t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `bias[n]` to every row of `x[.., n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tb.len();
        if tb.shape().len() != 1 || tx.last_dim() != n {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            add_into(row, tb.data());
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x) || self.needs(bias);
        self.push("add_row", t, Op::AddRow(x, bias), needs)
    }

    /// Scalar-times-tensor, the only broadcast the graph supports.
    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * s).collect())?;
        let needs = self.needs(x);
        self.push("scale", t, Op::Scale(x, s), needs)
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| f(*v)).collect())?;
        let needs = self.needs(x);
        self.push(name, t, op, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(p) => self.value(*p),
            None => return Err(TensorError::Contract("concat of zero tensors".into())),
        };
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::Contract(format!(
                "concat axis {axis} out of range for rank {rank}"
            )));
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = 0;
        for p in parts {
            let t = self.value(*p);
            let s = t.shape();
            let compatible = s.len() == rank
                && s.iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", first, t));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        self.join("concat", parts, outer, out_shape)
    }

    /// Stacks equal-shape tensors along a new `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(p) => self.value(*p),
            None => return Err(TensorError::Contract("stack of zero tensors".into())),
        };
        if axis > first.shape().len() {
            return Err(TensorError::Contract(format!("stack axis {axis} out of range")));
        }
        for p in parts {
            if self.value(*p).shape() != first.shape() {
                return Err(shape_err("stack", first, self.value(*p)));
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape.insert(axis, parts.len());
        let outer: usize = out_shape[..axis].iter().product();
        self.join("stack", parts, outer, out_shape)
    }

    fn join(&mut self, name: &'static str, parts: &[Var], outer: usize, out_shape: Vec<usize>) -> Result<Var> {
        let chunks: Vec<usize> = parts.iter().map(|p| self.value(*p).len() / outer).collect();
        let total: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &ch) in parts.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(*p).data()[o * ch..(o + 1) * ch]);
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        let t = Tensor::new(out_shape, out)?;
        self.push(
            name,
            t,
            Op::Join {
                parts: parts.to_vec(),
                outer,
                chunks,
            },
            needs,
        )
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::Contract(format!(
                "slice [{start}, {}) on axis {axis} of shape {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let in_chunk = shape[axis] * inner;
        let out_chunk = len * inner;
        let offset = start * inner;
        let mut out = Vec::with_capacity(outer * out_chunk);
        for o in 0..outer {
            let base = o * in_chunk + offset;
            out.extend_from_slice(&tx.data()[base..base + out_chunk]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let needs = self.needs(x);
        self.push(
            "slice",
            Tensor::new(out_shape, out)?,
            Op::Slice {
                input: x,
                outer,
                in_chunk,
                offset,
                out_chunk,
            },
            needs,
        )
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.last_dim();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x);
        self.push("softmax", t, Op::Softmax(x), needs)
    }

    /// Single embedding row: `table[V,d]`, index → `[d]`.
    pub fn lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        self.lookup_impl(table, &[index], true)
    }

    /// Batch of embedding rows: `table[V,d]`, n indices → `[n,d]`.
    pub fn lookup_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        self.lookup_impl(table, indices, false)
    }

    fn lookup_impl(&mut self, table: Var, indices: &[usize], squeeze: bool) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = matrix_dims(tt).ok_or_else(|| TensorError::Contract("lookup table must be rank 2".into()))?;
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(TensorError::Index {
                    op: "lookup",
                    index: i,
                    len: v,
                });
            }
            out.extend_from_slice(tt.row(i));
        }
        let shape = if squeeze { vec![d] } else { vec![indices.len(), d] };
        let needs = self.needs(table);
        self.push(
            "lookup",
            Tensor::new(shape, out)?,
            Op::Lookup {
                table,
                indices: indices.to_vec(),
            },
            needs,
        )
    }

    /// Negative log-likelihood of `target` under `softmax(logits[V])`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.cross_entropy_masked(logits, &[target], &[1.0])
    }

    /// Weighted sum over rows of `-log softmax(logits[b])[targets[b]]`.
    /// A weight of 0 masks a row out entirely (its target is not checked
    /// against the vocabulary).
    pub fn cross_entropy_masked(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let tl = self.value(logits);
        let v = tl.last_dim();
        let rows = tl.len() / v;
        if targets.len() != rows || weights.len() != rows {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                left: tl.shape().to_vec(),
                right: vec![targets.len(), weights.len()],
            });
        }
        let mut probs = tl.data().to_vec();
        let mut loss = 0.0;
        for (b, row) in probs.chunks_mut(v).enumerate() {
            let w = weights[b];
            let t = targets[b];
            if w != 0.0 && t >= v {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: t,
                    len: v,
                });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            if w != 0.0 {
                loss += w * (lse - row[t]);
            }
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let needs = self.needs(logits);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            needs,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Sums a list of tensors of equal shape.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (first, rest) = xs
            .split_first()
            .ok_or_else(|| TensorError::Contract("add_all of zero tensors".into()))?;
        rest.iter().try_fold(*first, |acc, x| self.add(acc, *x))
    }

    /// `seq[B,T,d]`, `query[B,d]` → `[B,T]` of per-position dot products.
    pub fn batch_dot(&mut self, seq: Var, query: Var) -> Result<Var> {
        let (ts, tq) = (self.value(seq), self.value(query));
        let (b, t, d) = match (ts.shape(), tq.shape()) {
            ([b, t, d], [b2, d2]) if b == b2 && d == d2 => (*b, *t, *d),
            _ => return Err(shape_err("batch_dot", ts, tq)),
        };
        let mut out = vec![0.0; b * t];
        for bi in 0..b {
            let q = &tq.data()[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let row = &ts.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                out[bi * t + ti] = row.iter().zip(q).map(|(x, y)| x * y).sum();
            }
        }
        let needs = self.needs(seq) || self.needs(query);
        self.push("batch_dot", Tensor::new(vec![b, t], out)?, Op::BatchDot { seq, query }, needs)
    }

    /// `weights[B,T]`, `seq[B,T,d]` → `[B,d]` with row b = Σ_t w[b,t]·seq[b,t].
    pub fn weighted_sum(&mut self, weights: Var, seq: Var) -> Result<Var> {
        let (tw, ts) = (self.value(weights), self.value(seq));
        let (b, t, d) = match (tw.shape(), ts.shape()) {
            ([b, t], [b2, t2, d]) if b == b2 && t == t2 => (*b, *t, *d),
            _ => return Err(shape_err("weighted_sum", tw, ts)),
        };
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let acc = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let w = tw.data()[bi * t + ti];
                let row = &ts.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += w * x;
                }
            }
        }
        let needs = self.needs(weights) || self.needs(seq);
        self.push(
            "weighted_sum",
            Tensor::new(vec![b, d], out)?,
            Op::WeightedSum { weights, seq },
            needs,
        )
    }

    /// Reverse pass from a scalar `loss`, seeded with 1.0. Gradients
    /// accumulate over every use of a node; afterwards each node reachable
    /// from the loss carries its gradient (see [`Graph::grad`]).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            if self.nodes[id].needs_grad {
                self.propagate(id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for node in &mut self.nodes {
            node.value.set_grad(None);
        }
        for (id, g) in grads.into_iter().enumerate() {
            if self.nodes[id].needs_grad {
                self.nodes[id].value.set_grad(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = matrix_dims(ta).unwrap();
                let n = tb.shape()[1];
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                acc(*a, &mut |da| {
                    gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), 1.0, da)
                });
                acc(*b, &mut |db| {
                    gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), 1.0, db)
                });
            }
            Op::MatMulT(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = matrix_dims(ta).unwrap();
                let n = tb.shape()[0];
                // C = A·Bᵀ: dA = dC · B, dB = dCᵀ · A
                acc(*a, &mut |da| {
                    gemm(m, n, k, g, (n as isize, 1), tb.data(), (k as isize, 1), 1.0, da)
                });
                acc(*b, &mut |db| {
                    gemm(n, m, k, g, (1, n as isize), ta.data(), (k as isize, 1), 1.0, db)
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |da| {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(tb) {
                        *d += gi * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, gi), x) in db.iter_mut().zip(g).zip(ta) {
                        *d += gi * x;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                acc(*x, &mut |dx| add_into(dx, g));
                let n = nodes[bias.0].value.len();
                acc(*bias, &mut |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |dx| {
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += gi * s;
                }
            }),
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Join { parts, outer, chunks } => {
                let total: usize = chunks.iter().sum();
                let mut offset = 0;
                for (p, &ch) in parts.iter().zip(chunks) {
                    acc(*p, &mut |dp| {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + ch];
                            add_into(&mut dp[o * ch..(o + 1) * ch], src);
                        }
                    });
                    offset += ch;
                }
            }
            Op::Slice {
                input,
                outer,
                in_chunk,
                offset,
                out_chunk,
            } => acc(*input, &mut |dx| {
                for o in 0..*outer {
                    let base = o * in_chunk + offset;
                    add_into(&mut dx[base..base + out_chunk], &g[o * out_chunk..(o + 1) * out_chunk]);
                }
            }),
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                acc(*x, &mut |dx| {
                    for ((dr, gr), yr) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::Lookup { table, indices } => {
                let d = nodes[table.0].value.last_dim();
                acc(*table, &mut |dt| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut dt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let v = nodes[logits.0].value.last_dim();
                acc(*logits, &mut |dl| {
                    for (b, (dr, pr)) in dl.chunks_mut(v).zip(probs.chunks(v)).enumerate() {
                        let w = weights[b] * g[0];
                        if w == 0.0 {
                            continue;
                        }
                        for (d, p) in dr.iter_mut().zip(pr) {
                            *d += w * p;
                        }
                        dr[targets[b]] -= w;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::BatchDot { seq, query } => {
                let (ts, tq) = (&nodes[seq.0].value, &nodes[query.0].value);
                let (b, t, d) = (ts.shape()[0], ts.shape()[1], ts.shape()[2]);
                acc(*seq, &mut |ds| {
                    for bi in 0..b {
                        let q = &tq.data()[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let gi = g[bi * t + ti];
                            let row = &mut ds[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            for (r, qv) in row.iter_mut().zip(q) {
                                *r += gi * qv;
                            }
                        }
                    }
                });
                acc(*query, &mut |dq| {
                    for bi in 0..b {
                        let qrow = &mut dq[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let gi = g[bi * t + ti];
                            let row = &ts.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            for (q, s) in qrow.iter_mut().zip(row) {
                                *q += gi * s;
                            }
                        }
                    }
                });
            }
            Op::WeightedSum { weights, seq } => {
                let (tw, ts) = (&nodes[weights.0].value, &nodes[seq.0].value);
                let (b, t, d) = (ts.shape()[0], ts.shape()[1], ts.shape()[2]);
                acc(*weights, &mut |dw| {
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let row = &ts.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            dw[bi * t + ti] += row.iter().zip(gr).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*seq, &mut |ds| {
                    for bi in 0..b {
                        let gr = &g[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let w = tw.data()[bi * t + ti];
                            let row = &mut ds[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            for (r, gv) in row.iter_mut().zip(gr) {
                                *r += w * gv;
                            }
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
