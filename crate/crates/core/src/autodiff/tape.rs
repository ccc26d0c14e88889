use std::sync::atomic::{AtomicU32, Ordering};

use super::{AutodiffError, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: u32,
    tape: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    RepeatCols(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Embedding(Var, Vec<usize>),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    BceWithLogits(Var, Vec<f64>),
    LogSumExpRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic reverse-mode tape. Build a fresh one per training step.
///
/// Every forward op appends a node; nodes are in topological order by
/// construction. Leaves created with `requires_grad` accumulate
/// d(loss)/d(leaf) on each [`Tape::backward`] call until
/// [`Tape::zero_grads`].
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover m*k, k*n and m*n under
    // the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Adjoint buffer of an input, or `None` when it needs no gradient.
fn grad_slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.index()];
    if !n.requires_grad {
        return None;
    }
    Some(adj[v.index()].get_or_insert_with(|| vec![0.0; n.value.numel()]))
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
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<(), AutodiffError> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(AutodiffError::NotOnTape);
        }
        Ok(())
    }

    fn node(&self, v: Var) -> Result<&Node, AutodiffError> {
        self.check(v)?;
        Ok(&self.nodes[v.index()])
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var { index, tape: self.id }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index()].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor, AutodiffError> {
        Ok(&self.node(v)?.value)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if v.tape != self.id {
            return None;
        }
        let node = self.nodes.get(v.index())?;
        let g = self.leaf_grads[v.index()].as_ref()?;
        Some(Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches leaf shape"))
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    fn unary_rg(&self, a: Var) -> Result<bool, AutodiffError> {
        Ok(self.node(a)?.requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<bool, AutodiffError> {
        let na = self.node(a)?;
        let nb = self.node(b)?;
        if na.value.shape() != nb.value.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: na.value.shape().to_vec(),
                rhs: nb.value.shape().to_vec(),
            });
        }
        Ok(na.requires_grad || nb.requires_grad)
    }

    fn matrix_dims(&self, op: &'static str, a: Var) -> Result<(usize, usize), AutodiffError> {
        let t = &self.node(a)?.value;
        if t.shape().len() != 2 {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn elementwise(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, AutodiffError> {
        let rg = self.unary_rg(a)?;
        let value = self.value(a).map(f);
        Ok(self.push(value, op, rg))
    }

    fn require_finite(&self, op: &'static str, a: Var) -> Result<(), AutodiffError> {
        if !self.node(a)?.value.is_finite() {
            return Err(AutodiffError::NonFinite { op });
        }
        Ok(())
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (n, k) = self.matrix_dims("matmul", a)?;
        let (k2, m) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: vec![n, k],
                rhs: vec![k2, m],
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(
            (n, k, m),
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (m as isize, 1),
            &mut out,
            0.0,
        );
        let rg = self.nodes[a.index()].requires_grad || self.nodes[b.index()].requires_grad;
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Matmul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let rg = self.same_shape("add", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let rg = self.same_shape("sub", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Adds a bias vector (`[m]` or `[1, m]`) to every row of `[n, m]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (_, m) = self.matrix_dims("add_bias", a)?;
        let nb = self.node(bias)?;
        if nb.value.numel() != m || nb.value.rows() != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                lhs: self.value(a).shape().to_vec(),
                rhs: nb.value.shape().to_vec(),
            });
        }
        let rg = self.nodes[a.index()].requires_grad || nb.requires_grad;
        let b = self.value(bias).data();
        let va = self.value(a);
        let data = va
            .data()
            .chunks_exact(m)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let rg = self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.elementwise(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        self.elementwise(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, Op::Neg(a), |x| -x)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.require_finite("exp", a)?;
        self.elementwise(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.require_finite("log", a)?;
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(AutodiffError::NonFinite { op: "log" });
        }
        self.elementwise(a, Op::Log(a), f64::ln)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Absolute value; the subgradient at zero is taken as 0.
    pub fn abs(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.elementwise(a, Op::Abs(a), f64::abs)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let rg = self.unary_rg(a)?;
        let s = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let rg = self.unary_rg(a)?;
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// `[n, m] -> [n, 1]` row sums.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (n, m) = self.matrix_dims("sum_rows", a)?;
        let rg = self.unary_rg(a)?;
        let data = self.value(a).data().chunks_exact(m).map(|r| r.iter().sum()).collect();
        Ok(self.push(Tensor::matrix(n, 1, data)?, Op::SumRows(a), rg))
    }

    /// `[n, 1] -> [n, m]` by repeating the single column.
    pub fn repeat_cols(&mut self, a: Var, m: usize) -> Result<Var, AutodiffError> {
        let (n, c) = self.matrix_dims("repeat_cols", a)?;
        if c != 1 || m == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "repeat_cols",
                lhs: vec![n, c],
                rhs: vec![n, m],
            });
        }
        let rg = self.unary_rg(a)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, m))
            .collect();
        Ok(self.push(Tensor::matrix(n, m, data)?, Op::RepeatCols(a), rg))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (n, _) = self.matrix_dims("concat", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut rg = false;
        for &p in parts {
            let (pn, pm) = self.matrix_dims("concat", p)?;
            if pn != n {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: vec![pn, pm],
                });
            }
            widths.push(pm);
            rg |= self.nodes[p.index()].requires_grad;
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::matrix(n, total, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let (n, m) = self.matrix_dims("slice", a)?;
        if start >= end || end > m {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                lhs: vec![n, m],
                rhs: vec![start, end],
            });
        }
        let rg = self.unary_rg(a)?;
        let data = self
            .value(a)
            .data()
            .chunks_exact(m)
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        Ok(self.push(Tensor::matrix(n, end - start, data)?, Op::Slice(a, start), rg))
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let (v, e) = self.matrix_dims("embedding", table)?;
        if ids.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "embedding",
                lhs: vec![v, e],
                rhs: vec![0],
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: v });
        }
        let rg = self.unary_rg(table)?;
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(&t[i * e..(i + 1) * e]);
        }
        let value = Tensor::matrix(ids.len(), e, data)?;
        Ok(self.push(value, Op::Embedding(table, ids.to_vec()), rg))
    }

    /// Summed softmax cross-entropy over rows of `[n, classes]` logits.
    /// Rows whose target is `None` contribute nothing.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, AutodiffError> {
        let (n, c) = self.matrix_dims("softmax_cross_entropy", logits)?;
        if targets.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: vec![n, c],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: c });
        }
        self.require_finite("softmax_cross_entropy", logits)?;
        let rg = self.unary_rg(logits)?;
        let x = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for i in 0..n {
            let Some(t) = targets[i] else { continue };
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &l) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (l - max).exp();
                z += *p;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            loss += z.ln() + max - row[t];
        }
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Summed Bernoulli negative log-likelihood given logits and targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var, AutodiffError> {
        let v = &self.node(logits)?.value;
        if v.numel() != targets.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: v.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let rg = self.unary_rg(logits)?;
        let loss = v.data().iter().zip(targets).map(|(&l, &t)| softplus(l) - t * l).sum();
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits(logits, targets.to_vec()), rg))
    }

    /// `[n, m] -> [n, 1]` stabilized log-sum-exp of each row.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (n, m) = self.matrix_dims("logsumexp_rows", a)?;
        self.require_finite("logsumexp_rows", a)?;
        let rg = self.unary_rg(a)?;
        let data = self
            .value(a)
            .data()
            .chunks_exact(m)
            .map(crate::distributions::log_sum_exp)
            .collect();
        Ok(self.push(Tensor::matrix(n, 1, data)?, Op::LogSumExpRows(a), rg))
    }

    /// Reverse pass from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let node = self.node(loss)?;
        if !node.value.is_scalar() {
            return Err(AutodiffError::NotScalar {
                shape: node.value.shape().to_vec(),
            });
        }
        let end = loss.index();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; end + 1];
        adj[end] = Some(vec![1.0]);
        for i in (0..=end).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        macro_rules! with_grad {
            ($v:expr, |$buf:ident| $body:block) => {
                if let Some($buf) = grad_slot(nodes, adj, $v) $body
            };
        }
        let val = |v: Var| nodes[v.index()].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (n, k) = (nodes[a.index()].value.shape()[0], nodes[a.index()].value.shape()[1]);
                let m = nodes[b.index()].value.shape()[1];
                // dA = G B^T : [n, m] x [m, k]
                with_grad!(*a, |ga| {
                    gemm((n, m, k), g, (m as isize, 1), val(*b), (1, m as isize), ga, 1.0);
                });
                // dB = A^T G : [k, n] x [n, m]
                with_grad!(*b, |gb| {
                    gemm((k, n, m), val(*a), (1, k as isize), g, (m as isize, 1), gb, 1.0);
                });
            }
            Op::Add(a, b) => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
                with_grad!(*b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
                with_grad!(*b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                });
            }
            Op::AddBias(a, b) => {
                with_grad!(*a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
                with_grad!(*b, |gb| {
                    let m = gb.len();
                    for row in g.chunks_exact(m) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                with_grad!(*a, |ga| {
                    for ((x, y), w) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *x += y * w;
                    }
                });
                with_grad!(*b, |gb| {
                    for ((x, y), w) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *x += y * w;
                    }
                });
            }
            Op::Scale(a, c) => with_grad!(*a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
            }),
            Op::AddScalar(a) => with_grad!(*a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }),
            Op::Neg(a) => with_grad!(*a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }),
            Op::Tanh(a) => with_grad!(*a, |ga| {
                for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * (1.0 - o * o);
                }
            }),
            Op::Sigmoid(a) => with_grad!(*a, |ga| {
                for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * o * (1.0 - o);
                }
            }),
            Op::Exp(a) => with_grad!(*a, |ga| {
                for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                    *x += y * o;
                }
            }),
            Op::Log(a) => with_grad!(*a, |ga| {
                for ((x, y), v) in ga.iter_mut().zip(g).zip(val(*a)) {
                    *x += y / v;
                }
            }),
            Op::Relu(a) => with_grad!(*a, |ga| {
                for ((x, y), v) in ga.iter_mut().zip(g).zip(val(*a)) {
                    if *v > 0.0 {
                        *x += y;
                    }
                }
            }),
            Op::Abs(a) => with_grad!(*a, |ga| {
                for ((x, y), v) in ga.iter_mut().zip(g).zip(val(*a)) {
                    if *v > 0.0 {
                        *x += y;
                    } else if *v < 0.0 {
                        *x -= y;
                    }
                }
            }),
            Op::Sum(a) => with_grad!(*a, |ga| {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }),
            Op::Mean(a) => with_grad!(*a, |ga| {
                let s = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += s);
            }),
            Op::SumRows(a) => with_grad!(*a, |ga| {
                let m = ga.len() / g.len();
                for (row, y) in ga.chunks_exact_mut(m).zip(g) {
                    row.iter_mut().for_each(|x| *x += y);
                }
            }),
            Op::RepeatCols(a) => with_grad!(*a, |ga| {
                let m = g.len() / ga.len();
                for (x, row) in ga.iter_mut().zip(g.chunks_exact(m)) {
                    *x += row.iter().sum::<f64>();
                }
            }),
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.index()].value.cols();
                    with_grad!(p, |gp| {
                        for (dst, src) in gp.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                            dst.iter_mut().zip(&src[offset..offset + w]).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice(a, start) => with_grad!(*a, |ga| {
                let w = out.cols();
                let m = nodes[a.index()].value.cols();
                for (dst, src) in ga.chunks_exact_mut(m).zip(g.chunks_exact(w)) {
                    dst[*start..start + w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                }
            }),
            Op::Embedding(table, ids) => with_grad!(*table, |gt| {
                let e = out.cols();
                for (&id, src) in ids.iter().zip(g.chunks_exact(e)) {
                    gt[id * e..(id + 1) * e].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                }
            }),
            Op::SoftmaxCrossEntropy { logits, targets, probs } => with_grad!(*logits, |gl| {
                let c = nodes[logits.index()].value.cols();
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = &mut gl[r * c..(r + 1) * c];
                    for (x, p) in row.iter_mut().zip(&probs[r * c..(r + 1) * c]) {
                        *x += g[0] * p;
                    }
                    row[t] -= g[0];
                }
            }),
            Op::BceWithLogits(logits, targets) => with_grad!(*logits, |gl| {
                for ((x, l), t) in gl.iter_mut().zip(val(*logits)).zip(targets) {
                    *x += g[0] * (sigmoid(*l) - t);
                }
            }),
            Op::LogSumExpRows(a) => with_grad!(*a, |ga| {
                let m = ga.len() / g.len();
                let xa = val(*a);
                for (r, (y, lse)) in g.iter().zip(out.data()).enumerate() {
                    for j in 0..m {
                        ga[r * m + j] += y * (xa[r * m + j] - lse).exp();
                    }
                }
            }),
        }
    }
}
