use std::rc::Rc;

use super::array::{gemm, order_free_sum, Array};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sqrt,
    /// Square root with `sqrt(0) = 0` and a zero subgradient there.
    SafeSqrt,
    Tanh,
    Sigmoid,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    GatherRows { x: Var, index: Rc<[usize]> },
    Reshape(Var),
    Softmax(Var),
    RowDot(Var, Var),
    Inner(Var, Var),
    Sum(Var),
    Attend { theta: Var, values: Var },
    LstmGates(Var),
    LstmCell { gates: Var, c_prev: Var },
    LstmOutput { gates: Var, c: Var },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation, replayed in reverse by [`Tape::backward`].
///
/// Nodes only ever reference earlier nodes, so the tape order is a valid
/// topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` when the root does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, materializing zeros for unreachable nodes.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Array {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Array::zeros(tape.value(var).shape()),
        }
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

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, var: Var) -> &Array {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn unary(&mut self, op: UnaryOp, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let name = match op {
            UnaryOp::Log => Some("log"),
            UnaryOp::Sqrt => Some("sqrt"),
            _ => None,
        };
        if let Some(name) = name {
            if let Some(&bad) = xv.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(Error::Domain {
                    op: name,
                    value: bad,
                });
            }
        }
        if op == UnaryOp::SafeSqrt {
            if let Some(&bad) = xv.data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
                return Err(Error::Domain {
                    op: "safe_sqrt",
                    value: bad,
                });
            }
        }
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Neg => |v| -v,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Log => f64::ln,
            UnaryOp::Sqrt | UnaryOp::SafeSqrt => f64::sqrt,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Square => |v| v * v,
        };
        let value = xv.map(f);
        let needs = self.needs(x);
        Ok(self.push(value, Op::Unary(op, x), needs))
    }

    /// Elementwise binary op; one side may be a single-element array.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let shape = if av.shape() == bv.shape() {
            av.shape().to_vec()
        } else if bv.is_scalar() {
            av.shape().to_vec()
        } else if av.is_scalar() {
            bv.shape().to_vec()
        } else {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        if op == BinaryOp::Div {
            if let Some(&bad) = bv.data().iter().find(|&&v| v == 0.0) {
                return Err(Error::Domain {
                    op: "div",
                    value: bad,
                });
            }
        }
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let sa = ad.len() != n || (ad.len() == 1 && n == 1);
        let sb = bd.len() != n || (bd.len() == 1 && n == 1);
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
        };
        let data = (0..n)
            .map(|k| f(ad[if sa { 0 } else { k }], bd[if sb { 0 } else { k }]))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::from_parts(shape, data), Op::Binary(op, a, b), needs))
    }

    /// Dispatcher over the elementwise family: `b` is required for
    /// the binary ops and ignored for unary ones.
    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let rhs = || b.ok_or_else(|| Error::invalid("binary elementwise op needs two operands"));
        match op {
            Elementwise::Add => self.binary(BinaryOp::Add, a, rhs()?),
            Elementwise::Sub => self.binary(BinaryOp::Sub, a, rhs()?),
            Elementwise::Mul => self.binary(BinaryOp::Mul, a, rhs()?),
            Elementwise::Div => self.binary(BinaryOp::Div, a, rhs()?),
            Elementwise::Neg => self.unary(UnaryOp::Neg, a),
            Elementwise::Exp => self.unary(UnaryOp::Exp, a),
            Elementwise::Log => self.unary(UnaryOp::Log, a),
            Elementwise::Sqrt => self.unary(UnaryOp::Sqrt, a),
            Elementwise::Tanh => self.unary(UnaryOp::Tanh, a),
            Elementwise::Square => self.unary(UnaryOp::Square, a),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sqrt, x)
    }

    pub fn safe_sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::SafeSqrt, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, x)
    }

    /// `x * factor` for a fixed factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, factor), needs)
    }

    /// `x + offset` for a fixed offset.
    pub fn shift(&mut self, x: Var, offset: f64) -> Var {
        let value = self.value(x).map(|v| v + offset);
        let needs = self.needs(x);
        self.push(value, Op::Shift(x), needs)
    }

    fn matrix_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::from_parts(vec![m, n], out), Op::MatMul(a, b), needs))
    }

    /// `x · w + bias`, with the bias added to every row.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("affine", x)?;
        let (k2, n) = self.matrix_dims("affine", w)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "affine",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let bv = self.value(bias);
        if bv.len() != n {
            return Err(Error::ShapeMismatch {
                op: "affine bias",
                lhs: vec![n],
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        gemm(m, k, n, self.value(x).data(), false, self.value(w).data(), false, &mut out, true);
        let needs = self.needs(x) || self.needs(w) || self.needs(bias);
        Ok(self.push(Array::from_parts(vec![m, n], out), Op::Affine(x, w, bias), needs))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero parts"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = extents(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let pv = self.value(p);
                let chunk = pv.shape()[axis] * inner;
                data.extend_from_slice(&pv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Array::from_parts(shape, data),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// `len` consecutive entries of `x` along `axis`, starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: s,
                rhs: vec![start, len],
            });
        }
        let (outer, extent, inner) = extents(&s, axis);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let needs = self.needs(x);
        Ok(self.push(Array::from_parts(shape, data), Op::Slice { x, axis, start }, needs))
    }

    /// Rows of a matrix selected by `index` (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let (rows, cols) = self.matrix_dims("gather_rows", x)?;
        if let Some(&bad) = index.iter().find(|&&r| r >= rows) {
            return Err(Error::invalid(format!("gather_rows index {bad} >= {rows}")));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &r in index.iter() {
            data.extend_from_slice(&xv[r * cols..(r + 1) * cols]);
        }
        let needs = self.needs(x);
        let shape = vec![index.len(), cols];
        Ok(self.push(Array::from_parts(shape, data), Op::GatherRows { x, index }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if shape.iter().product::<usize>() != xv.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Array::from_parts(shape.to_vec(), xv.data().to_vec());
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape(x), needs))
    }

    /// Softmax along the last axis (each row of a matrix, or a whole vector).
    ///
    /// Max-subtracted, and the normalizer is summed independently of the
    /// order of the entries.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let xv = self.value(logits);
        if xv.shape().is_empty() || xv.shape().len() > 2 {
            return Err(Error::invalid(format!(
                "softmax expects a vector or matrix, got {:?}",
                xv.shape()
            )));
        }
        let n = *xv.shape().last().unwrap();
        if n == 0 {
            return Err(Error::invalid("softmax over zero entries"));
        }
        let mut data = Vec::with_capacity(xv.len());
        let mut scratch = vec![0.0; n];
        for row in xv.data().chunks(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (s, &v) in scratch.iter_mut().zip(row) {
                *s = (v - max).exp();
            }
            let start = data.len();
            data.extend_from_slice(&scratch);
            let z = order_free_sum(&mut scratch);
            data[start..].iter_mut().for_each(|v| *v /= z);
        }
        let shape = xv.shape().to_vec();
        let needs = self.needs(logits);
        Ok(self.push(Array::from_parts(shape, data), Op::Softmax(logits), needs))
    }

    /// Per-row inner products of two equally shaped matrices.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("row_dot", a)?;
        if self.shape(b) != [r, c] {
            return Err(Error::ShapeMismatch {
                op: "row_dot",
                lhs: vec![r, c],
                rhs: self.shape(b).to_vec(),
            });
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = av
            .chunks(c.max(1))
            .zip(bv.chunks(c.max(1)))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .take(r)
            .collect::<Vec<f64>>();
        let data = if c == 0 { vec![0.0; r] } else { data };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::from_parts(vec![r], data), Op::RowDot(a, b), needs))
    }

    /// Inner product of two vectors.
    pub fn inner(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 1 || av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "inner",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let s = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Array::scalar(s), Op::Inner(a, b), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        self.push(Array::scalar(s), Op::Sum(x), needs)
    }

    /// Attention-weighted sum: `out[i] = Σ_k theta[i, k] · values[i·K + k]`.
    ///
    /// `theta` is `[N × K]`, `values` is `[N·K × D]`. The per-feature sums are
    /// evaluated independently of the order of the `K` terms.
    pub fn attend(&mut self, theta: Var, values: Var) -> Result<Var> {
        let (n, k) = self.matrix_dims("attend", theta)?;
        let (rows, d) = self.matrix_dims("attend", values)?;
        if rows != n * k {
            return Err(Error::ShapeMismatch {
                op: "attend",
                lhs: vec![n, k],
                rhs: vec![rows, d],
            });
        }
        let (tv, vv) = (self.value(theta).data(), self.value(values).data());
        let mut out = vec![0.0; n * d];
        let mut terms = vec![0.0; k];
        for i in 0..n {
            for f in 0..d {
                for (j, t) in terms.iter_mut().enumerate() {
                    *t = tv[i * k + j] * vv[(i * k + j) * d + f];
                }
                out[i * d + f] = order_free_sum(&mut terms);
            }
        }
        let needs = self.needs(theta) || self.needs(values);
        Ok(self.push(
            Array::from_parts(vec![n, d], out),
            Op::Attend { theta, values },
            needs,
        ))
    }

    fn lstm_dims(&self, gates: Var, state: Var) -> Result<(usize, usize)> {
        let (b, g) = self.matrix_dims("lstm", gates)?;
        let (b2, h) = self.matrix_dims("lstm", state)?;
        if b != b2 || g != 4 * h {
            return Err(Error::ShapeMismatch {
                op: "lstm",
                lhs: vec![b, g],
                rhs: vec![b2, h],
            });
        }
        Ok((b, h))
    }

    /// Activates LSTM gate pre-activations laid out as
    /// `[input | forget | candidate | output]`: sigmoid on every block except
    /// the candidate, which gets tanh.
    pub fn lstm_gates(&mut self, pre: Var) -> Result<Var> {
        let (b, g) = self.matrix_dims("lstm_gates", pre)?;
        if g % 4 != 0 {
            return Err(Error::ShapeMismatch {
                op: "lstm_gates",
                lhs: vec![b, g],
                rhs: vec![4],
            });
        }
        let h = g / 4;
        let mut out = self.value(pre).data().to_vec();
        for row in out.chunks_mut(g) {
            for (k, v) in row.iter_mut().enumerate() {
                *v = if k / h == 2 { v.tanh() } else { sigmoid(*v) };
            }
        }
        let needs = self.needs(pre);
        Ok(self.push(Array::from_parts(vec![b, g], out), Op::LstmGates(pre), needs))
    }

    /// Cell-state update from activated gates: `c = f·c_prev + i·g`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (b, h) = self.lstm_dims(gates, c_prev)?;
        let (gv, cv) = (self.value(gates).data(), self.value(c_prev).data());
        let mut out = vec![0.0; b * h];
        for r in 0..b {
            let g = &gv[r * 4 * h..(r + 1) * 4 * h];
            for u in 0..h {
                out[r * h + u] = g[h + u] * cv[r * h + u] + g[u] * g[2 * h + u];
            }
        }
        let needs = self.needs(gates) || self.needs(c_prev);
        Ok(self.push(
            Array::from_parts(vec![b, h], out),
            Op::LstmCell { gates, c_prev },
            needs,
        ))
    }

    /// LSTM output `h = o·tanh(c)` from activated gates.
    pub fn lstm_output(&mut self, gates: Var, c: Var) -> Result<Var> {
        let (b, h) = self.lstm_dims(gates, c)?;
        let (gv, cv) = (self.value(gates).data(), self.value(c).data());
        let mut out = vec![0.0; b * h];
        for r in 0..b {
            for u in 0..h {
                out[r * h + u] = gv[r * 4 * h + 3 * h + u] * cv[r * h + u].tanh();
            }
        }
        let needs = self.needs(gates) || self.needs(c);
        Ok(self.push(
            Array::from_parts(vec![b, h], out),
            Op::LstmOutput { gates, c },
            needs,
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].needs_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // The root itself always reports an all-ones gradient.
        if grads[root.0].is_none() {
            grads[root.0] = Some(vec![1.0]);
        }
        let mut out: Vec<Option<Array>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Array::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        out.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! with_slot {
            ($v:expr, |$acc:ident| $body:block) => {
                if let Some($acc) = slot(nodes, grads, $v) $body
            };
        }
        let node = &nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, x) => {
                let xv = nodes[x.0].value.data();
                with_slot!(*x, |acc| {
                    for k in 0..g.len() {
                        acc[k] += g[k]
                            * match op {
                                UnaryOp::Neg => -1.0,
                                UnaryOp::Exp => y[k],
                                UnaryOp::Log => 1.0 / xv[k],
                                UnaryOp::Sqrt => 0.5 / y[k],
                                UnaryOp::SafeSqrt => {
                                    if xv[k] > 0.0 {
                                        0.5 / y[k]
                                    } else {
                                        0.0
                                    }
                                }
                                UnaryOp::Tanh => 1.0 - y[k] * y[k],
                                UnaryOp::Sigmoid => y[k] * (1.0 - y[k]),
                                UnaryOp::Square => 2.0 * xv[k],
                            };
                    }
                });
            }
            Op::Binary(op, a, b) => {
                let n = g.len();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let ia = |k: usize| if av.len() == n { k } else { 0 };
                let ib = |k: usize| if bv.len() == n { k } else { 0 };
                with_slot!(*a, |acc| {
                    for k in 0..n {
                        acc[ia(k)] += match op {
                            BinaryOp::Add | BinaryOp::Sub => g[k],
                            BinaryOp::Mul => g[k] * bv[ib(k)],
                            BinaryOp::Div => g[k] / bv[ib(k)],
                        };
                    }
                });
                with_slot!(*b, |acc| {
                    for k in 0..n {
                        acc[ib(k)] += match op {
                            BinaryOp::Add => g[k],
                            BinaryOp::Sub => -g[k],
                            BinaryOp::Mul => g[k] * av[ia(k)],
                            BinaryOp::Div => -g[k] * av[ia(k)] / (bv[ib(k)] * bv[ib(k)]),
                        };
                    }
                });
            }
            Op::Scale(x, f) => with_slot!(*x, |acc| {
                acc.iter_mut().zip(g).for_each(|(a, &gk)| *a += gk * f);
            }),
            Op::Shift(x) | Op::Reshape(x) => with_slot!(*x, |acc| {
                acc.iter_mut().zip(g).for_each(|(a, &gk)| *a += gk);
            }),
            Op::MatMul(a, b) | Op::Affine(a, b, _) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                with_slot!(*a, |acc| {
                    gemm(m, n, k, g, false, bv, true, acc, true);
                });
                with_slot!(*b, |acc| {
                    gemm(k, m, n, av, true, g, false, acc, true);
                });
                if let Op::Affine(_, _, bias) = &node.op {
                    with_slot!(*bias, |acc| {
                        for row in g.chunks(n.max(1)) {
                            acc.iter_mut().zip(row).for_each(|(a, &gk)| *a += gk);
                        }
                    });
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = extents(node.value.shape(), *axis);
                let mut offset = 0;
                let total = node.value.shape()[*axis] * inner;
                for &p in parts {
                    let chunk = nodes[p.0].value.shape()[*axis] * inner;
                    with_slot!(p, |acc| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            acc[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, &gk)| *a += gk);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, extent, inner) = extents(nodes[x.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                with_slot!(*x, |acc| {
                    for o in 0..outer {
                        let base = (o * extent + start) * inner;
                        acc[base..base + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(a, &gk)| *a += gk);
                    }
                });
            }
            Op::GatherRows { x, index } => {
                let cols = node.value.shape()[1];
                with_slot!(*x, |acc| {
                    for (r, &src) in index.iter().enumerate() {
                        acc[src * cols..(src + 1) * cols]
                            .iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(a, &gk)| *a += gk);
                    }
                });
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().unwrap();
                with_slot!(*x, |acc| {
                    for ((yr, gr), ar) in y.chunks(n).zip(g.chunks(n)).zip(acc.chunks_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for k in 0..n {
                            ar[k] += yr[k] * (gr[k] - dot);
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let c = nodes[a.0].value.shape()[1];
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                with_slot!(*a, |acc| {
                    for (r, &gr) in g.iter().enumerate() {
                        for d in 0..c {
                            acc[r * c + d] += gr * bv[r * c + d];
                        }
                    }
                });
                with_slot!(*b, |acc| {
                    for (r, &gr) in g.iter().enumerate() {
                        for d in 0..c {
                            acc[r * c + d] += gr * av[r * c + d];
                        }
                    }
                });
            }
            Op::Inner(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                with_slot!(*a, |acc| {
                    acc.iter_mut().zip(bv).for_each(|(p, &q)| *p += g[0] * q);
                });
                with_slot!(*b, |acc| {
                    acc.iter_mut().zip(av).for_each(|(p, &q)| *p += g[0] * q);
                });
            }
            Op::Sum(x) => with_slot!(*x, |acc| {
                acc.iter_mut().for_each(|a| *a += g[0]);
            }),
            Op::Attend { theta, values } => {
                let k = nodes[theta.0].value.shape()[1];
                let d = node.value.shape()[1];
                let tv = nodes[theta.0].value.data();
                let vv = nodes[values.0].value.data();
                with_slot!(*theta, |acc| {
                    for (e, a) in acc.iter_mut().enumerate() {
                        let i = e / k;
                        let row = &vv[e * d..(e + 1) * d];
                        *a += row
                            .iter()
                            .zip(&g[i * d..(i + 1) * d])
                            .map(|(p, q)| p * q)
                            .sum::<f64>();
                    }
                });
                with_slot!(*values, |acc| {
                    for (e, &t) in tv.iter().enumerate() {
                        let i = e / k;
                        for f in 0..d {
                            acc[e * d + f] += t * g[i * d + f];
                        }
                    }
                });
            }
            Op::LstmGates(x) => {
                let h = node.value.shape()[1] / 4;
                with_slot!(*x, |acc| {
                    for (k, a) in acc.iter_mut().enumerate() {
                        let v = y[k];
                        let slope = if (k % (4 * h)) / h == 2 {
                            1.0 - v * v
                        } else {
                            v * (1.0 - v)
                        };
                        *a += g[k] * slope;
                    }
                });
            }
            Op::LstmCell { gates, c_prev } => {
                let h = node.value.shape()[1];
                let gv = nodes[gates.0].value.data();
                let cv = nodes[c_prev.0].value.data();
                with_slot!(*c_prev, |acc| {
                    for (idx, a) in acc.iter_mut().enumerate() {
                        let (r, u) = (idx / h, idx % h);
                        *a += g[idx] * gv[r * 4 * h + h + u];
                    }
                });
                with_slot!(*gates, |acc| {
                    for idx in 0..g.len() {
                        let (r, u) = (idx / h, idx % h);
                        let base = r * 4 * h;
                        acc[base + u] += g[idx] * gv[base + 2 * h + u];
                        acc[base + h + u] += g[idx] * cv[idx];
                        acc[base + 2 * h + u] += g[idx] * gv[base + u];
                    }
                });
            }
            Op::LstmOutput { gates, c } => {
                let h = node.value.shape()[1];
                let gv = nodes[gates.0].value.data();
                let cv = nodes[c.0].value.data();
                let tanh_c: Vec<f64> = cv.iter().map(|v| v.tanh()).collect();
                with_slot!(*c, |acc| {
                    for (idx, a) in acc.iter_mut().enumerate() {
                        let (r, u) = (idx / h, idx % h);
                        let tc = tanh_c[idx];
                        *a += g[idx] * gv[r * 4 * h + 3 * h + u] * (1.0 - tc * tc);
                    }
                });
                with_slot!(*gates, |acc| {
                    for idx in 0..g.len() {
                        let (r, u) = (idx / h, idx % h);
                        acc[r * 4 * h + 3 * h + u] += g[idx] * tanh_c[idx];
                    }
                });
            }
        }
    }
}

/// The elementwise family exposed through [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Square,
}
