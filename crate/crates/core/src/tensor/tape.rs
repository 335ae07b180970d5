use std::collections::{BTreeMap, HashMap};

use super::{matmul_raw, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Leaf {
    Param { name: String, shape: Vec<usize> },
    Input { name: String },
    Const,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(Leaf),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    SumRows(usize),
    SumCols(usize),
    SumAll(usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    BroadcastScalar(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    ClampMin(usize, f64),
    Sqrt(usize),
    Recip(usize),
    RowNorm(usize),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    PadRows(usize, usize),
    LogSumExpRows(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::SumAll(_) => "sum_all",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::ClampMin(..) => "clamp_min",
            Op::Sqrt(_) => "sqrt",
            Op::Recip(_) => "recip",
            Op::RowNorm(_) => "row_norm",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::PadRows(..) => "pad_rows",
            Op::LogSumExpRows(_) => "logsumexp_rows",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::ConcatRows(parts) => parts.clone(),
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::SumAll(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::BroadcastScalar(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::ClampMin(a, _)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::RowNorm(a)
            | Op::SliceRows(a, _)
            | Op::PadRows(a, _)
            | Op::LogSumExpRows(a) => vec![*a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-parameter gradient values, keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn merge(&mut self, other: Gradients) {
        self.grads.extend(other.grads);
    }
}

/// Eager computation tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order. All values are stored as matrices; a rank-1 leaf of
/// length `n` becomes `1 x n`.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, usize>,
}

fn as_matrix(t: Tensor) -> Tensor {
    match t.shape().len() {
        2 => t,
        1 => {
            let n = t.numel();
            t.reshape(vec![1, n]).expect("same length")
        }
        _ => {
            let r = t.shape()[0];
            let c = t.numel() / r;
            t.reshape(vec![r, c]).expect("same length")
        }
    }
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

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push_leaf(&mut self, value: Tensor, leaf: Leaf) -> Result<Var> {
        let idx = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                node: idx,
                op: "leaf",
            });
        }
        self.nodes.push(Node {
            value: as_matrix(value),
            op: Op::Leaf(leaf),
        });
        Ok(Var(idx))
    }

    /// Registers a trainable parameter. Registering the same name twice
    /// returns the existing node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        if let Some(&idx) = self.params.get(name) {
            return Ok(Var(idx));
        }
        let v = self.push_leaf(
            value.clone(),
            Leaf::Param {
                name: name.to_string(),
                shape: value.shape().to_vec(),
            },
        )?;
        self.params.insert(name.to_string(), v.0);
        Ok(v)
    }

    pub fn input(&mut self, name: &str, value: Tensor) -> Result<Var> {
        self.push_leaf(
            value,
            Leaf::Input {
                name: name.to_string(),
            },
        )
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(value, Leaf::Const)
    }

    /// A constant copy of `v`'s current value: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).map(|&i| Var(i))
    }

    pub fn input_name(&self, v: Var) -> Option<&str> {
        match &self.nodes[v.0].op {
            Op::Leaf(Leaf::Input { name }) => Some(name),
            _ => None,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownNode(v.0))
        }
    }

    fn mismatch(&self, op: &'static str, detail: String) -> TensorError {
        TensorError::ShapeMismatch {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let idx = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                node: idx,
                op: op.name(),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(idx))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(f);
        self.push(value, op)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(self.mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::matrix(ta.rows(), ta.cols(), data)?;
        self.push(value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let ((n, k), (k2, m)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(self.mismatch("matmul", format!("{n}x{k} @ {k2}x{m}")));
        }
        let value = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a.0, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a.0), |x| x + c)
    }

    /// `n x m -> n x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        let value = Tensor::matrix(t.rows(), 1, data)?;
        self.push(value, Op::SumRows(a.0))
    }

    /// `n x m -> 1 x m`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let mut data = vec![0.0; t.cols()];
        for i in 0..t.rows() {
            for (d, &v) in data.iter_mut().zip(t.row(i)) {
                *d += v;
            }
        }
        let value = Tensor::matrix(1, t.cols(), data)?;
        self.push(value, Op::SumCols(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Repeats a `1 x m` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        self.check(a)?;
        let (r, m) = self.shape(a);
        if r != 1 || n == 0 {
            return Err(self.mismatch("broadcast_rows", format!("expected 1x{m}, got {r}x{m}")));
        }
        let row = self.value(a).data().to_vec();
        let mut data = Vec::with_capacity(n * m);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        let value = Tensor::matrix(n, m, data)?;
        self.push(value, Op::BroadcastRows(a.0))
    }

    /// Repeats an `n x 1` column `m` times.
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        self.check(a)?;
        let (n, c) = self.shape(a);
        if c != 1 || m == 0 {
            return Err(self.mismatch("broadcast_cols", format!("expected {n}x1, got {n}x{c}")));
        }
        let col = self.value(a).data();
        let mut data = Vec::with_capacity(n * m);
        for &v in col {
            data.extend(std::iter::repeat_n(v, m));
        }
        let value = Tensor::matrix(n, m, data)?;
        self.push(value, Op::BroadcastCols(a.0))
    }

    pub fn broadcast_scalar(&mut self, a: Var, n: usize, m: usize) -> Result<Var> {
        self.check(a)?;
        if self.value(a).numel() != 1 || n == 0 || m == 0 {
            let s = self.shape(a);
            return Err(self.mismatch("broadcast_scalar", format!("expected scalar, got {s:?}")));
        }
        let v = self.value(a).item();
        self.push(Tensor::filled(&[n, m], v), Op::BroadcastScalar(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a.0), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Op::LeakyRelu(a.0, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.unary(a, Op::ClampMin(a.0, floor), |x| x.max(floor))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sqrt(a.0), f64::sqrt)
    }

    /// Elementwise `1/x`, with `1/0` defined as `0`.
    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Recip(a.0), |x| if x == 0.0 { 0.0 } else { 1.0 / x })
    }

    /// Euclidean norm of each row: `n x m -> n x 1`. The gradient at a zero
    /// row is taken to be zero.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| super::l2_norm(t.row(i))).collect();
        let value = Tensor::matrix(t.rows(), 1, data)?;
        self.push(value, Op::RowNorm(a.0))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| self.mismatch("concat_rows", "no inputs".into()))?;
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            self.check(p)?;
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(self.mismatch("concat_rows", format!("{c} columns, expected {cols}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        self.push(value, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        let (r, c) = self.shape(a);
        if len == 0 || start + len > r {
            return Err(self.mismatch("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::matrix(len, c, data)?;
        self.push(value, Op::SliceRows(a.0, start))
    }

    /// Embeds `a` at row offset `start` inside a zero matrix with `total` rows.
    pub fn pad_rows(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        self.check(a)?;
        let (r, c) = self.shape(a);
        if start + r > total {
            return Err(self.mismatch("pad_rows", format!("{r} rows at {start} exceed {total}")));
        }
        let mut data = vec![0.0; total * c];
        data[start * c..(start + r) * c].copy_from_slice(self.value(a).data());
        let value = Tensor::matrix(total, c, data)?;
        self.push(value, Op::PadRows(a.0, start))
    }

    /// Row-wise `log(sum(exp(x)))`, `n x m -> n x 1`. Differentiable once.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|i| {
                let row = t.row(i);
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        let value = Tensor::matrix(t.rows(), 1, data)?;
        self.push(value, Op::LogSumExpRows(a.0))
    }

    // Composite helpers.

    /// `x @ w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        let n = self.shape(xw).0;
        let bb = self.broadcast_rows(b, n)?;
        self.add(xw, bb)
    }

    /// Multiplies every row of `x` by the `1 x m` row `r`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let n = self.shape(x).0;
        let rb = self.broadcast_rows(r, n)?;
        self.mul(x, rb)
    }

    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let n = self.shape(x).0;
        let rb = self.broadcast_rows(r, n)?;
        self.add(x, rb)
    }

    /// Multiplies row `i` of `x` by `c[i]` for an `n x 1` column `c`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let m = self.shape(x).1;
        let cb = self.broadcast_cols(c, m)?;
        self.mul(x, cb)
    }

    /// Per-row layer normalization followed by an elementwise affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let m = self.shape(x).1;
        let s = self.sum_rows(x)?;
        let mean = self.scale(s, 1.0 / m as f64)?;
        let mean_b = self.broadcast_cols(mean, m)?;
        let centered = self.sub(x, mean_b)?;
        let sq = self.mul(centered, centered)?;
        let ss = self.sum_rows(sq)?;
        let var = self.scale(ss, 1.0 / m as f64)?;
        let var_eps = self.add_scalar(var, eps)?;
        let std = self.sqrt(var_eps)?;
        let inv = self.recip(std)?;
        let normed = self.mul_col(centered, inv)?;
        let scaled = self.mul_row(normed, gain)?;
        self.add_row(scaled, bias)
    }

    /// Gradients of the scalar `output` with respect to `wrt`, recorded as
    /// new nodes on this tape so they can be differentiated again.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.grad_inner(output, wrt, false)
    }

    /// Gradient of the scalar `output` with respect to an input node. The
    /// result is itself a tape node: backpropagating through it
    /// differentiates the gradient, with piecewise-linear activation slopes
    /// held fixed.
    pub fn input_gradient(&mut self, output: Var, wrt_input: Var) -> Result<Var> {
        Ok(self.grad_inner(output, &[wrt_input], true)?[0])
    }

    fn grad_inner(&mut self, output: Var, wrt: &[Var], twice: bool) -> Result<Vec<Var>> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        let out_val = &self.nodes[output.0].value;
        if !out_val.is_scalar() {
            return Err(TensorError::NotScalar {
                node: output.0,
                shape: out_val.shape().to_vec(),
            });
        }
        let end = output.0 + 1;
        // Nodes that depend on some `wrt` leaf.
        let mut reach = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                reach[w.0] = true;
            }
        }
        for i in 0..end {
            if !reach[i] && self.nodes[i].op.inputs().iter().any(|&j| reach[j]) {
                reach[i] = true;
            }
        }
        let mut grads: Vec<Option<usize>> = vec![None; end];
        if reach[output.0] {
            let seed = self.constant(Tensor::scalar(1.0))?;
            grads[output.0] = Some(seed.0);
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !reach[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            if twice && matches!(op, Op::LogSumExpRows(_)) {
                return Err(TensorError::Unsupported {
                    node: i,
                    op: op.name(),
                });
            }
            let contribs = self.vjp(i, &op, Var(g))?;
            for (j, c) in contribs {
                if !reach[j] {
                    continue;
                }
                grads[j] = Some(match grads[j] {
                    None => c.0,
                    Some(prev) => self.add(Var(prev), c)?.0,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match grads.get(w.0).copied().flatten() {
                Some(g) => out.push(Var(g)),
                None => {
                    let shape = self.value(w).shape().to_vec();
                    out.push(self.constant(Tensor::zeros(&shape))?);
                }
            }
        }
        Ok(out)
    }

    fn vjp(&mut self, node: usize, op: &Op, g: Var) -> Result<Vec<(usize, Var)>> {
        let y = Var(node);
        Ok(match *op {
            Op::Leaf(_) => vec![],
            Op::MatMul(a, b) => {
                let bt = self.transpose(Var(b))?;
                let ga = self.matmul(g, bt)?;
                let at = self.transpose(Var(a))?;
                let gb = self.matmul(at, g)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Transpose(a) => vec![(a, self.transpose(g)?)],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, self.scale(g, -1.0)?)],
            Op::Mul(a, b) => {
                let ga = self.mul(g, Var(b))?;
                let gb = self.mul(g, Var(a))?;
                vec![(a, ga), (b, gb)]
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c)?)],
            Op::AddScalar(a) => vec![(a, g)],
            Op::SumRows(a) => {
                let m = self.shape(Var(a)).1;
                vec![(a, self.broadcast_cols(g, m)?)]
            }
            Op::SumCols(a) => {
                let n = self.shape(Var(a)).0;
                vec![(a, self.broadcast_rows(g, n)?)]
            }
            Op::SumAll(a) => {
                let (n, m) = self.shape(Var(a));
                vec![(a, self.broadcast_scalar(g, n, m)?)]
            }
            Op::BroadcastRows(a) => vec![(a, self.sum_cols(g)?)],
            Op::BroadcastCols(a) => vec![(a, self.sum_rows(g)?)],
            Op::BroadcastScalar(a) => vec![(a, self.sum_all(g)?)],
            Op::Relu(a) => {
                let mask = self.value(Var(a)).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(a, self.mul_const(g, mask)?)]
            }
            Op::LeakyRelu(a, s) => {
                let mask = self.value(Var(a)).map(|x| if x > 0.0 { 1.0 } else { s });
                vec![(a, self.mul_const(g, mask)?)]
            }
            Op::ClampMin(a, floor) => {
                let mask = self.value(Var(a)).map(|x| if x > floor { 1.0 } else { 0.0 });
                vec![(a, self.mul_const(g, mask)?)]
            }
            Op::Sqrt(a) => {
                let r = self.recip(y)?;
                let half = self.scale(r, 0.5)?;
                vec![(a, self.mul(g, half)?)]
            }
            Op::Recip(a) => {
                let yy = self.mul(y, y)?;
                let gyy = self.mul(g, yy)?;
                vec![(a, self.scale(gyy, -1.0)?)]
            }
            Op::RowNorm(a) => {
                let r = self.recip(y)?;
                let gr = self.mul(g, r)?;
                vec![(a, self.mul_col(Var(a), gr)?)]
            }
            Op::ConcatRows(ref parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut off = 0;
                for &p in parts {
                    let r = self.shape(Var(p)).0;
                    out.push((p, self.slice_rows(g, off, r)?));
                    off += r;
                }
                out
            }
            Op::SliceRows(a, start) => {
                let total = self.shape(Var(a)).0;
                vec![(a, self.pad_rows(g, start, total)?)]
            }
            Op::PadRows(a, start) => {
                let r = self.shape(Var(a)).0;
                vec![(a, self.slice_rows(g, start, r)?)]
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(Var(a));
                let lse = self.value(y);
                let mut soft = x.clone();
                for i in 0..soft.rows() {
                    let l = lse.get(i, 0);
                    for v in soft.row_mut(i) {
                        *v = (*v - l).exp();
                    }
                }
                let m = soft.cols();
                let gb = self.broadcast_cols(g, m)?;
                vec![(a, self.mul_const(gb, soft)?)]
            }
        })
    }

    fn mul_const(&mut self, g: Var, mask: Tensor) -> Result<Var> {
        let c = self.constant(mask)?;
        self.mul(g, c)
    }

    /// Gradients of the scalar `output` for every registered parameter.
    /// Nodes recorded while computing them are discarded afterwards.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        let mut names: Vec<(String, usize, Vec<usize>)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Leaf(Leaf::Param { name, shape }) => Some((name.clone(), i, shape.clone())),
                _ => None,
            })
            .collect();
        names.sort();
        let before = self.nodes.len();
        let wrt: Vec<Var> = names.iter().map(|(_, i, _)| Var(*i)).collect();
        let gvars = self.grad_inner(output, &wrt, false)?;
        let mut grads = BTreeMap::new();
        for ((name, _, shape), gv) in names.into_iter().zip(gvars) {
            let t = self.value(gv).clone().reshape(shape)?;
            grads.insert(name, t);
        }
        self.nodes.truncate(before);
        Ok(Gradients { grads })
    }
}
