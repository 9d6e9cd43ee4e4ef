use super::array::{matmul_a_bt, matmul_at_b, Array};
use crate::error::{Error, Result};

/// Inputs to `exp` are clamped to this value so forward passes on finite
/// inputs never overflow.
pub const EXP_CLAMP: f64 = 50.0;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Mask marks entries whose input was clamped (zero local gradient).
    Exp(Var, Vec<bool>),
    Log(Var),
    Powf(Var, f64),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Transpose(Var),
}

struct Node {
    value: Array,
    grad: Option<Array>,
    op: Op,
    requires_grad: bool,
}

/// A computation tape. Single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    clamped: usize,
}

fn check_axis(op: &'static str, axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::shape(op, &[axis], &[0, 1]));
    }
    Ok(())
}

fn broadcast_kind(op: &'static str, a: &Array, b: &Array) -> Result<Broadcast> {
    let ([ar, ac], [br, bc]) = (a.shape(), b.shape());
    if ar == br && ac == bc {
        Ok(Broadcast::Same)
    } else if br == 1 && bc == ac {
        Ok(Broadcast::Row)
    } else if bc == 1 && br == ar {
        Ok(Broadcast::Col)
    } else if br == 1 && bc == 1 {
        Ok(Broadcast::Scalar)
    } else {
        Err(Error::shape(op, &a.shape(), &b.shape()))
    }
}

/// Index into `b` matching element `(r, c)` of the broadcast result.
#[inline]
fn bidx(kind: Broadcast, r: usize, c: usize, b_cols: usize) -> usize {
    match kind {
        Broadcast::Same => r * b_cols + c,
        Broadcast::Row => c,
        Broadcast::Col => r,
        Broadcast::Scalar => 0,
    }
}

fn zip_broadcast(a: &Array, b: &Array, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Array {
    let mut out = Array::zeros(a.rows(), a.cols());
    let bc = b.cols();
    let (ad, bd) = (a.data(), b.data());
    let cols = a.cols();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let (r, c) = (i / cols, i % cols);
        *o = f(ad[i], bd[bidx(kind, r, c, bc)]);
    }
    out
}

/// Sums a full-size gradient down onto the broadcast operand's shape.
fn reduce_to(kind: Broadcast, grad: &Array, b_shape: [usize; 2]) -> Array {
    if kind == Broadcast::Same {
        return grad.clone();
    }
    let mut out = Array::zeros(b_shape[0], b_shape[1]);
    let cols = grad.cols();
    for (i, &g) in grad.data().iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        out.data_mut()[bidx(kind, r, c, b_shape[1])] += g;
    }
    out
}

fn softmax_values(x: &Array, axis: usize) -> Array {
    let mut out = x.clone();
    let (rows, cols) = (x.rows(), x.cols());
    let (outer, inner, stride_outer, stride_inner) = if axis == 1 {
        (rows, cols, cols, 1)
    } else {
        (cols, rows, 1, cols)
    };
    let data = out.data_mut();
    for o in 0..outer {
        let base = o * stride_outer;
        let max = (0..inner)
            .map(|k| data[base + k * stride_inner])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in 0..inner {
            let e = (data[base + k * stride_inner] - max).exp();
            data[base + k * stride_inner] = e;
            total += e;
        }
        for k in 0..inner {
            data[base + k * stride_inner] /= total;
        }
    }
    out
}

#[inline]
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

    /// Number of `exp` inputs clamped at [`EXP_CLAMP`] so far.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v` (zeros if nothing has flowed into it).
    pub fn grad(&self, v: Var) -> Array {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Array::zeros(node.value.rows(), node.value.cols()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise `a + b`; `b` may broadcast as a row, a column or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("add", self.value(a), self.value(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), kind, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b, kind), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("sub", self.value(a), self.value(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), kind, |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b, kind), rg))
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("mul", self.value(a), self.value(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), kind, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b, kind), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// `a + offset` elementwise.
    pub fn shift(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        let rg = self.needs(&[a]);
        self.push(value, Op::Shift(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.needs(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.needs(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// `exp(min(a, EXP_CLAMP))`; clamped entries are counted.
    pub fn exp(&mut self, a: Var) -> Var {
        let input = self.value(a);
        let mask: Vec<bool> = input.data().iter().map(|&x| x > EXP_CLAMP).collect();
        let value = input.map(|x| x.min(EXP_CLAMP).exp());
        self.clamped += mask.iter().filter(|&&m| m).count();
        let rg = self.needs(&[a]);
        self.push(value, Op::Exp(a, mask), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.needs(&[a]);
        self.push(value, Op::Log(a), rg)
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(exponent));
        let rg = self.needs(&[a]);
        self.push(value, Op::Powf(a, exponent), rg)
    }

    /// Softmax along `axis` (0 normalises each column, 1 each row), computed
    /// with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("softmax", axis)?;
        let value = softmax_values(self.value(a), axis);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        check_axis("concat", axis)?;
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat", &[], &[]))?;
        let [r0, c0] = self.shape(first);
        let mut total = 0;
        for &p in parts {
            let [r, c] = self.shape(p);
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(Error::shape("concat", &[r0, c0], &[r, c]));
            }
            total += if axis == 0 { r } else { c };
        }
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(total * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Array::from_vec(total, c0, data)?
        } else {
            let mut out = Array::zeros(r0, total);
            let mut offset = 0;
            for &p in parts {
                let v = self.value(p);
                for r in 0..r0 {
                    out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
                }
                offset += v.cols();
            }
            out
        };
        let rg = self.needs(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        check_axis("slice", axis)?;
        let src = self.value(a);
        let extent = src.shape()[axis];
        if start + len > extent || len == 0 {
            return Err(Error::shape("slice", &src.shape(), &[axis, start, len]));
        }
        let value = if axis == 0 {
            Array::from_vec(
                len,
                src.cols(),
                src.data()[start * src.cols()..(start + len) * src.cols()].to_vec(),
            )?
        } else {
            let mut out = Array::zeros(src.rows(), len);
            for r in 0..src.rows() {
                out.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
            }
            out
        };
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Slice { input: a, axis, start }, rg))
    }

    /// Sum over `axis`; the reduced dimension is kept with extent 1.
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("sum", axis)?;
        let value = reduce_axis(self.value(a), axis);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Sum(a, axis), rg))
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis("mean", axis)?;
        let src = self.value(a);
        let n = src.shape()[axis] as f64;
        let value = reduce_axis(src, axis).map(|x| x / n);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::Mean(a, axis), rg))
    }

    /// Sum of every element, as a `1 × 1` node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array::scalar(self.value(a).sum());
        let rg = self.needs(&[a]);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Backpropagates from a scalar root, adding into every reachable node's
    /// stored gradient. Gradients are not reset between calls.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != [1, 1] {
            return Err(Error::shape("backward", &shape, &[1, 1]));
        }
        let mut adj: Vec<Option<Array>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Array::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array, adj: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contribution: Array| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contribution),
                slot @ None => *slot = Some(contribution),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    send(*a, matmul_a_bt(g, val(*b)));
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, matmul_at_b(val(*a), g));
                }
            }
            Op::Add(a, b, kind) => {
                send(*a, g.clone());
                if self.nodes[b.0].requires_grad {
                    send(*b, reduce_to(*kind, g, val(*b).shape()));
                }
            }
            Op::Sub(a, b, kind) => {
                send(*a, g.clone());
                if self.nodes[b.0].requires_grad {
                    send(*b, reduce_to(*kind, &g.map(|x| -x), val(*b).shape()));
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    send(*a, zip_broadcast(g, bv, *kind, |x, y| x * y));
                }
                if self.nodes[b.0].requires_grad {
                    let prod = elementwise(g, av, |gi, x| gi * x);
                    send(*b, reduce_to(*kind, &prod, bv.shape()));
                }
            }
            Op::Scale(a, factor) => send(*a, g.map(|x| x * factor)),
            Op::Shift(a) => send(*a, g.clone()),
            Op::Tanh(a) => send(*a, elementwise(g, &node.value, |gi, y| gi * (1.0 - y * y))),
            Op::Sigmoid(a) => send(*a, elementwise(g, &node.value, |gi, y| gi * y * (1.0 - y))),
            Op::Exp(a, mask) => {
                let mut out = elementwise(g, &node.value, |gi, y| gi * y);
                for (o, &m) in out.data_mut().iter_mut().zip(mask) {
                    if m {
                        *o = 0.0;
                    }
                }
                send(*a, out);
            }
            Op::Log(a) => send(*a, elementwise(g, val(*a), |gi, x| gi / x)),
            Op::Powf(a, e) => send(
                *a,
                elementwise(g, val(*a), |gi, x| gi * e * x.powf(e - 1.0)),
            ),
            Op::Softmax(a, axis) => send(*a, softmax_backward(g, &node.value, *axis)),
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let [r, c] = val(p).shape();
                    let piece = if *axis == 0 {
                        Array::from_vec(r, c, g.data()[offset * c..(offset + r) * c].to_vec())
                            .expect("concat rows")
                    } else {
                        let mut out = Array::zeros(r, c);
                        for row in 0..r {
                            out.row_mut(row)
                                .copy_from_slice(&g.row(row)[offset..offset + c]);
                        }
                        out
                    };
                    offset += if *axis == 0 { r } else { c };
                    send(p, piece);
                }
            }
            Op::Slice { input, axis, start } => {
                let [r, c] = val(*input).shape();
                let mut out = Array::zeros(r, c);
                if *axis == 0 {
                    out.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                } else {
                    for row in 0..r {
                        out.row_mut(row)[*start..*start + g.cols()].copy_from_slice(g.row(row));
                    }
                }
                send(*input, out);
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let [r, c] = val(*a).shape();
                let n = if matches!(node.op, Op::Mean(..)) {
                    [r, c][*axis] as f64
                } else {
                    1.0
                };
                let kind = if *axis == 0 {
                    Broadcast::Row
                } else {
                    Broadcast::Col
                };
                let out = zip_broadcast(&Array::zeros(r, c), g, kind, |_, y| y / n);
                send(*a, out);
            }
            Op::SumAll(a) => {
                let [r, c] = val(*a).shape();
                send(*a, Array::filled(r, c, g.item()));
            }
            Op::Transpose(a) => send(*a, g.transpose()),
        }
    }
}

fn elementwise(g: &Array, other: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let mut out = g.clone();
    for (o, &y) in out.data_mut().iter_mut().zip(other.data()) {
        *o = f(*o, y);
    }
    out
}

fn reduce_axis(src: &Array, axis: usize) -> Array {
    let (r, c) = (src.rows(), src.cols());
    if axis == 0 {
        let mut out = Array::zeros(1, c);
        for row in 0..r {
            for (o, &x) in out.data_mut().iter_mut().zip(src.row(row)) {
                *o += x;
            }
        }
        out
    } else {
        let data = (0..r).map(|row| src.row(row).iter().sum()).collect();
        Array::from_vec(r, 1, data).expect("reduce shape")
    }
}

/// dx = y ∘ (g − Σ(g ∘ y)) along the softmax axis.
fn softmax_backward(g: &Array, y: &Array, axis: usize) -> Array {
    let (rows, cols) = (y.rows(), y.cols());
    let mut out = Array::zeros(rows, cols);
    let (outer, inner, so, si) = if axis == 1 {
        (rows, cols, cols, 1)
    } else {
        (cols, rows, 1, cols)
    };
    let (gd, yd) = (g.data(), y.data());
    let od = out.data_mut();
    for o in 0..outer {
        let base = o * so;
        let dot: f64 = (0..inner)
            .map(|k| gd[base + k * si] * yd[base + k * si])
            .sum();
        for k in 0..inner {
            let idx = base + k * si;
            od[idx] = yd[idx] * (gd[idx] - dot);
        }
    }
    out
}
