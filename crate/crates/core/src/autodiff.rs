//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes a node holding
//! its value and the handles of its operands, so node indices are already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//!
//! ```
//! use lsdebm::autodiff::Graph;
//! use lsdebm::Tensor;
//!
//! let mut g = Graph::new();
//! let w = g.param(Tensor::from_vec(vec![1.0, -2.0, 3.0]));
//! let loss = g.sq_norm(w);
//! let loss = g.scale(loss, 0.5);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(w).unwrap().data(), &[1.0, -2.0, 3.0]);
//! ```
//!
//! Operand shapes are checked eagerly; a mismatch is reported by the
//! `try_*` variant of each binary op, while the plain variants panic with the
//! same message. Network code uses the panicking forms on shapes it built
//! itself and the checked forms on caller-supplied inputs.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    Reshape(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SqNorm(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // accumulated gradient, leaves only
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Moves the accumulated gradient of `v` out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        let node = &mut self.nodes[v.0];
        let shape = node.value.shape().to_vec();
        node.grad
            .take()
            .map(|g| Tensor::new(shape, g).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(
            value.all_finite(),
            "{}",
            Error::NonFinite(format!("{op:?}"))
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    pub fn try_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn try_sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn try_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn try_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x·W + b` with `x: [n, i]`, `W: [i, o]`, `b: [o]`.
    pub fn try_affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::Shape {
                op: "affine",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if bs != [ws[1]] {
            return Err(Error::Shape {
                op: "affine bias",
                lhs: ws.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        gemm(n, i, o, self.value(x).data(), false, self.value(w).data(), false, &mut out, 1.0);
        let value = Tensor::new(vec![n, o], out)?;
        Ok(self.push(value, Op::Affine(x, w, b), &[x, w, b]))
    }

    /// Column-wise concatenation of `[n, p]` and `[n, q]`.
    pub fn try_concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (n, p, q) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(va.row(r));
            out.extend_from_slice(vb.row(r));
        }
        let value = Tensor::new(vec![n, p + q], out)?;
        Ok(self.push(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Rows of a `[r, c]` table selected by `indices`.
    pub fn try_gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: s.to_vec(),
                rhs: vec![2],
            });
        }
        let rows = s[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let t = self.value(table);
        let c = s[1];
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![indices.len(), c], out)?;
        Ok(self.push(value, Op::GatherRows(table, indices.to_vec()), &[table]))
    }

    pub fn try_reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.try_add(a, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.try_sub(a, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.try_mul(a, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.try_matmul(a, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        self.try_affine(x, w, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        self.try_concat_cols(a, b).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        self.try_gather_rows(table, indices)
            .unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        self.try_reshape(a, shape).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |v| c * v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |v| v + c)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |v| v * sigmoid(v))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        self.push(value, Op::Mean(a), &[a])
    }

    pub fn sq_norm(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sq_norm());
        self.push(value, Op::SqNorm(a), &[a])
    }

    /// Back-propagates from a single-element `loss`, adding `∂loss/∂leaf`
    /// into every differentiable leaf's accumulated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&gout).for_each(|(a, g)| *a += g),
                    None => node.grad = Some(gout),
                }
                continue;
            }
            self.propagate(idx, &gout, &mut grads);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                self.send(grads, a, || gout.to_vec());
                self.send(grads, b, || gout.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(grads, a, || gout.to_vec());
                self.send(grads, b, || gout.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.send(grads, a, || gout.iter().zip(vb).map(|(g, y)| g * y).collect());
                self.send(grads, b, || gout.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, c) => self.send(grads, a, || gout.iter().map(|g| c * g).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => self.send(grads, a, || gout.to_vec()),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.send(grads, a, || {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gout, false, vb, true, &mut da, 0.0);
                    da
                });
                self.send(grads, b, || {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, va, true, gout, false, &mut db, 0.0);
                    db
                });
            }
            Op::Affine(x, w, b) => {
                let (sx, sw) = (self.shape(x), self.shape(w));
                let (n, i, o) = (sx[0], sx[1], sw[1]);
                let (vx, vw) = (self.value(x).data(), self.value(w).data());
                self.send(grads, x, || {
                    let mut dx = vec![0.0; n * i];
                    gemm(n, o, i, gout, false, vw, true, &mut dx, 0.0);
                    dx
                });
                self.send(grads, w, || {
                    let mut dw = vec![0.0; i * o];
                    gemm(i, n, o, vx, true, gout, false, &mut dw, 0.0);
                    dw
                });
                self.send(grads, b, || {
                    let mut db = vec![0.0; o];
                    for row in gout.chunks_exact(o) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    db
                });
            }
            Op::Silu(a) => {
                let va = self.value(a).data();
                self.send(grads, a, || {
                    gout.iter()
                        .zip(va)
                        .map(|(g, &x)| {
                            let s = sigmoid(x);
                            g * s * (1.0 + x * (1.0 - s))
                        })
                        .collect()
                });
            }
            Op::Sigmoid(a) => {
                self.send(grads, a, || gout.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect());
            }
            Op::Softplus(a) => {
                let va = self.value(a).data();
                self.send(grads, a, || gout.iter().zip(va).map(|(g, &x)| g * sigmoid(x)).collect());
            }
            Op::Exp(a) => {
                self.send(grads, a, || gout.iter().zip(out).map(|(g, e)| g * e).collect());
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(a).data();
                self.send(grads, a, || {
                    gout.iter()
                        .zip(va)
                        .map(|(g, &x)| if x > lo && x < hi { *g } else { 0.0 })
                        .collect()
                });
            }
            Op::ConcatCols(a, b) => {
                let (n, p) = (self.shape(a)[0], self.shape(a)[1]);
                let q = self.shape(b)[1];
                self.send(grads, a, || {
                    gout.chunks_exact(p + q).flat_map(|r| r[..p].to_vec()).collect()
                });
                self.send(grads, b, || {
                    gout.chunks_exact(p + q).flat_map(|r| r[p..].to_vec()).collect()
                });
                debug_assert_eq!(gout.len(), n * (p + q));
            }
            Op::GatherRows(table, ref indices) => {
                let s = self.shape(table);
                let c = s[1];
                self.send(grads, table, || {
                    let mut dt = vec![0.0; s[0] * c];
                    for (r, &i) in indices.iter().enumerate() {
                        dt[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&gout[r * c..(r + 1) * c])
                            .for_each(|(d, g)| *d += g);
                    }
                    dt
                });
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                self.send(grads, a, || vec![gout[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(a).len();
                self.send(grads, a, || vec![gout[0] / n as f64; n]);
            }
            Op::SqNorm(a) => {
                let va = self.value(a).data();
                self.send(grads, a, || va.iter().map(|x| 2.0 * gout[0] * x).collect());
            }
        }
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], to: Var, make: impl FnOnce() -> Vec<f64>) {
        if !self.wants(to) {
            return;
        }
        let g = make();
        match &mut grads[to.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
            slot @ None => *slot = Some(g),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
